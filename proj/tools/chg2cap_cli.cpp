#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "chg2cap/checkpoint.hpp"
#include "chg2cap/error.hpp"
#include "chg2cap/features.hpp"
#include "chg2cap/gradcheck_suite.hpp"
#include "chg2cap/trainer.hpp"

using namespace chg2cap;

namespace {

void write_json(const std::string& path, const nlohmann::json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bitemporal change captioning: data, training, evaluation"};
  app.require_subcommand(1);

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic dataset (features + manifest)");
  std::uint64_t gen_seed = 0;
  std::size_t gen_count = 32;
  std::string gen_out;
  SyntheticConfig syn;
  gen->add_option("--seed", gen_seed)->required();
  gen->add_option("--count", gen_count)->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--captions", syn.captions_per_record)->check(CLI::Range(1, 5));
  gen->add_option("--val-fraction", syn.val_fraction)->check(CLI::Range(0.0, 1.0));
  gen->add_option("--test-fraction", syn.test_fraction)->check(CLI::Range(0.0, 1.0));
  gen->add_option("--height", syn.height);
  gen->add_option("--width", syn.width);
  gen->add_option("--channels", syn.channels);

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab", "Build a vocabulary from every caption in a manifest");
  std::string bv_manifest, bv_out;
  int bv_min_freq = 5;
  bv->add_option("--manifest", bv_manifest)->required();
  bv->add_option("--min-freq", bv_min_freq);
  bv->add_option("--out", bv_out)->required();

  // train
  auto* tr = app.add_subcommand("train", "Train and keep the best validation BLEU-4 checkpoint");
  std::string tr_manifest, tr_config, tr_ckpt, tr_vocab, tr_final, tr_log;
  tr->add_option("--manifest", tr_manifest)->required();
  tr->add_option("--config", tr_config, "JSON with TrainConfig fields");
  tr->add_option("--out-ckpt", tr_ckpt)->required();
  tr->add_option("--vocab", tr_vocab, "vocabulary file; built from the manifest with min_freq otherwise");
  tr->add_option("--final-ckpt", tr_final, "also write the last-epoch checkpoint");
  tr->add_option("--log-json", tr_log, "per-epoch log");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Greedy-decode a split and score it");
  std::string ev_ckpt, ev_manifest, ev_split = "test", ev_json;
  bool ev_no_per_image = false;
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--manifest", ev_manifest)->required();
  ev->add_option("--split", ev_split);
  ev->add_option("--json-out", ev_json, "'-' or empty for stdout");
  ev->add_flag("--no-per-image", ev_no_per_image);

  // caption
  auto* cap = app.add_subcommand("caption", "Caption one feature file");
  std::string cap_ckpt, cap_features, cap_attn;
  cap->add_option("--ckpt", cap_ckpt)->required();
  cap->add_option("--features", cap_features)->required();
  cap->add_option("--attn", cap_attn, "write per-token cross-attention maps as JSON");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::string gc_module = "all";
  std::size_t gc_max_entries = 0;
  std::uint64_t gc_seed = 0;
  gc->add_option("--module", gc_module)->check(CLI::IsMember({"ops", "encoder", "decoder", "model", "all"}));
  gc->add_option("--max-entries", gc_max_entries, "probe at most this many entries per tensor (0 = all)");
  gc->add_option("--seed", gc_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto records = gen_synthetic(gen_seed, gen_count, syn);
      const auto manifest = write_dataset(gen_out, records);
      std::cout << "wrote " << records.size() << " records to " << manifest.string() << "\n";
    } else if (*bv) {
      const auto vocab = build_vocab(load_manifest(bv_manifest), bv_min_freq);
      vocab.save(bv_out);
      std::cout << "vocabulary: " << vocab.size() << " tokens\n";
    } else if (*tr) {
      const TrainConfig cfg = tr_config.empty() ? TrainConfig{} : load_train_config(tr_config);
      const auto records = load_manifest(tr_manifest);
      const auto vocab = tr_vocab.empty() ? build_vocab(records, cfg.min_freq) : Vocabulary::load(tr_vocab);
      const auto result = train(records, vocab, cfg, &std::cerr);
      save_checkpoint(tr_ckpt, result.best);
      if (!tr_final.empty()) save_checkpoint(tr_final, result.final);
      if (!tr_log.empty()) {
        auto rows = nlohmann::json::array();
        for (const auto& e : result.log)
          rows.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_bleu4", e.val_bleu4}});
        write_json(tr_log, rows);
      }
      std::cout << "best epoch " << result.best.epoch << " val BLEU-4 " << result.best.best_bleu4 << "\n";
    } else if (*ev) {
      const auto ckpt = load_checkpoint(ev_ckpt);
      const auto records = load_manifest(ev_manifest);
      const auto split = select_split(records, parse_split(ev_split));
      if (split.empty()) throw DataError("split '" + ev_split + "' has no records");
      write_json(ev_json, to_json(evaluate(ckpt.model, ckpt.vocab, split, !ev_no_per_image)));
    } else if (*cap) {
      const auto ckpt = load_checkpoint(cap_ckpt);
      const auto result = caption(ckpt.model, ckpt.vocab, load_feature_file(cap_features));
      std::cout << join_words(result.words) << "\n";
      if (!cap_attn.empty()) {
        const auto& m = ckpt.config.model;
        write_json(cap_attn, {{"height", m.height}, {"width", m.width}, {"words", result.words},
                              {"attention", result.attention}});
      }
    } else if (*gc) {
      bool ok = true;
      for (const auto& r : run_gradcheck_suite(gc_module, gc_max_entries, gc_seed)) {
        const bool pass = r.result.max_rel_error <= 1e-4;
        ok = ok && pass;
        std::cout << std::left << std::setw(28) << r.name << " max_rel_error " << std::setprecision(3)
                  << std::scientific << r.result.max_rel_error << std::defaultfloat << " probed " << r.result.probed
                  << " restepped " << r.result.restepped << " skipped " << r.result.skipped << " "
                  << std::setprecision(3) << r.seconds << "s " << (pass ? "ok" : "FAIL") << "\n";
      }
      if (!ok) throw NumericError("gradient check exceeded 1e-4");
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
