// Command-line driver: corpus tooling, the three training stages, solving,
// evaluation and the prompt ablation grid.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "logicsolver/logicsolver.hpp"

namespace ls = logicsolver;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string data_dir() {
  const char* env = std::getenv("LOGICSOLVER_DATA");
  return env && *env ? env : "data";
}

std::string default_kb() { return (std::filesystem::path(data_dir()) / "kb.json").string(); }

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ls::Error(ls::Errc::IoError, "cannot write '" + path + "'");
  out << text;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ls::Error(ls::Errc::IoError, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ls::Error(ls::Errc::ConfigError, path + ": " + e.what());
  }
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

/// Fills options not given on the command line from a JSON object whose
/// keys are long option names (dashes or underscores).
void merge_config(CLI::App& app, const std::string& path) {
  const json cfg = read_json_file(path);
  if (!cfg.is_object()) throw ls::Error(ls::Errc::ConfigError, path + ": config must be a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    std::string name = key;
    for (char& c : name) {
      if (c == '_') c = '-';
    }
    CLI::Option* opt = nullptr;
    try {
      opt = app.get_option("--" + name);
    } catch (const CLI::OptionNotFound&) {
      throw ls::Error(ls::Errc::ConfigError, path + ": unknown setting '" + key + "' for " + app.get_name());
    }
    if (opt->count() > 0) continue;
    if (value.is_array()) {
      std::vector<std::string> items;
      for (const auto& v : value) items.push_back(scalar_text(v));
      opt->add_result(items);
    } else {
      opt->add_result(scalar_text(value));
    }
    opt->run_callback();
  }
}

ordered_json echo_command(const CLI::App& app) {
  ordered_json j;
  j["subcommand"] = app.get_name();
  ordered_json opts = ordered_json::object();
  for (const CLI::Option* o : app.get_options()) {
    if (o->get_lnames().empty() || o->get_lnames().front() == "help") continue;
    const auto& res = o->results();
    if (res.empty()) continue;
    opts[o->get_lnames().front()] = res.size() == 1 ? ordered_json(res.front()) : ordered_json(res);
  }
  j["options"] = std::move(opts);
  return j;
}

ls::pipeline::Logger stderr_logger(bool quiet) {
  if (quiet) return {};
  return [](const std::string& line) { std::cerr << line << '\n'; };
}

struct TrainFlags {
  ls::pipeline::TrainConfig tc;

  void add(CLI::App* app) {
    app->add_option("--epochs", tc.epochs, "training epochs")->capture_default_str();
    app->add_option("--batch", tc.batch, "minibatch size")->capture_default_str();
    app->add_option("--lr", tc.lr, "learning rate (decoder and scoring parameters)")->capture_default_str();
    app->add_option("--encoder-lr", tc.encoder_lr, "learning rate of text encoders")->capture_default_str();
    app->add_option("--weight-decay", tc.weight_decay, "decoupled weight decay")->capture_default_str();
    app->add_option("--seed", tc.seed, "random seed")->capture_default_str();
    app->add_option("--target", tc.target, "stop early once the training metric reaches this")->capture_default_str();
    app->add_option("--eval-every", tc.eval_every, "epochs between training-metric checks")->capture_default_str();
  }
};

ls::corpus::Problem problem_for_solving(const json& j, std::size_t index) {
  json record = j;
  if (!record.contains("id")) record["id"] = "problem-" + std::to_string(index);
  return ls::corpus::problem_from_json(record);
}

std::vector<double> parse_triple(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw ls::Error(ls::Errc::ConfigError, flag + ": bad value '" + part + "'");
    }
  }
  if (out.size() != 3) throw ls::Error(ls::Errc::ConfigError, flag + " needs three values train,valid,test");
  return out;
}

int exit_code(ls::Errc e) {
  switch (e) {
    case ls::Errc::ConfigError: return 2;
    case ls::Errc::IoError: return 3;
    case ls::Errc::SchemaError:
    case ls::Errc::AnswerMismatch:
    case ls::Errc::MalformedPrefix: return 4;
    default: return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Logical-prompt math word problem solver"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON settings, overridden by explicit flags");
  app.add_flag("--quiet", quiet, "no progress output");
  std::string kb_path = default_kb();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic annotated corpus");
  std::size_t synth_count = 100;
  std::uint64_t synth_seed = 1;
  std::string synth_out = "-", synth_gen_config, synth_split, synth_split_counts, synth_out_dir;
  synth->add_option("--kb", kb_path, "knowledge base JSON")->capture_default_str();
  synth->add_option("--count", synth_count, "number of problems")->capture_default_str();
  synth->add_option("--seed", synth_seed, "random seed")->capture_default_str();
  synth->add_option("--generator-config", synth_gen_config, "generator settings JSON");
  synth->add_option("--out", synth_out, "output JSONL ('-' for stdout)")->capture_default_str();
  auto* split_ratio_opt =
      synth->add_option("--split", synth_split, "also write train/valid/test files with these ratios, e.g. 0.8,0.1,0.1");
  synth->add_option("--split-counts", synth_split_counts, "exact split sizes train,valid,test, e.g. 9485,1000,1000")
      ->excludes(split_ratio_opt);
  synth->add_option("--out-dir", synth_out_dir, "directory for split files");

  // stats
  auto* stats = app.add_subcommand("stats", "corpus statistics");
  std::string stats_corpus, stats_out = "-";
  stats->add_option("--corpus", stats_corpus, "corpus JSONL")->required();
  stats->add_option("--kb", kb_path, "knowledge base JSON")->capture_default_str();
  stats->add_option("--out", stats_out, "report JSON ('-' for stdout)")->capture_default_str();

  // train-retriever
  auto* tr = app.add_subcommand("train-retriever", "train the logic formula retriever");
  std::string tr_corpus, tr_out, tr_ranked;
  TrainFlags tr_flags{ls::pipeline::retriever_defaults()};
  ls::retriever::RetrieverConfig tr_cfg;
  tr->add_option("--corpus", tr_corpus, "training corpus JSONL")->required();
  tr->add_option("--kb", kb_path, "knowledge base JSON")->capture_default_str();
  tr->add_option("--out", tr_out, "checkpoint path")->required();
  tr->add_option("--hidden", tr_cfg.hidden, "hidden size")->capture_default_str();
  tr->add_option("--dropout", tr_cfg.dropout, "encoder output dropout")->capture_default_str();
  tr->add_flag("--printed-sign", tr_cfg.printed_sign, "use the sign-flipped ranking loss");
  tr->add_option("--ranked-out", tr_ranked, "write per-problem rankings JSONL");
  tr_flags.add(tr);

  // train-solver
  auto* ts = app.add_subcommand("train-solver", "train the expression tree solver");
  std::string ts_corpus, ts_out, ts_retriever, ts_placement = "behind", ts_selection = "retrieved";
  TrainFlags ts_flags{ls::pipeline::solver_defaults()};
  ls::solver::SolverConfig ts_cfg;
  std::size_t ts_k = 3;
  std::uint64_t ts_prompt_seed = 0;
  ts->add_option("--corpus", ts_corpus, "training corpus JSONL")->required();
  ts->add_option("--kb", kb_path, "knowledge base JSON")->capture_default_str();
  ts->add_option("--retriever-ckpt", ts_retriever, "retriever checkpoint (retrieved prompts)");
  ts->add_option("--K", ts_k, "number of logical prompts")->capture_default_str();
  ts->add_option("--placement", ts_placement, "prompt placement: ahead | behind")->capture_default_str();
  ts->add_option("--selection", ts_selection, "prompt selection: retrieved | random")->capture_default_str();
  ts->add_option("--prompt-seed", ts_prompt_seed, "seed for random selection")->capture_default_str();
  ts->add_option("--out", ts_out, "checkpoint path")->required();
  ts->add_option("--hidden", ts_cfg.hidden, "hidden size")->capture_default_str();
  ts->add_option("--dropout", ts_cfg.dropout, "encoder output dropout")->capture_default_str();
  ts->add_option("--constants", ts_cfg.constants, "constant vocabulary")->capture_default_str();
  ts->add_option("--beam", ts_cfg.beam, "default beam width recorded for solving")->capture_default_str();
  ts->add_option("--max-len", ts_cfg.max_len, "decode length limit (0: from training data)")->capture_default_str();
  ts_flags.add(ts);

  // train-logicgen
  auto* tl = app.add_subcommand("train-logicgen", "train the logic generator");
  std::string tl_corpus, tl_out, tl_solver;
  TrainFlags tl_flags{ls::pipeline::logicgen_defaults()};
  ls::logicgen::LogicGenConfig tl_cfg;
  bool tl_all_gold = false;
  tl->add_option("--corpus", tl_corpus, "training corpus JSONL")->required();
  tl->add_option("--kb", kb_path, "knowledge base JSON")->capture_default_str();
  tl->add_option("--solver-ckpt", tl_solver, "solver checkpoint")->required();
  tl->add_option("--out", tl_out, "checkpoint path")->required();
  tl->add_option("--dropout", tl_cfg.dropout, "encoder output dropout")->capture_default_str();
  tl->add_flag("--all-gold", tl_all_gold, "train on every problem, not only those the solver fits");
  tl_flags.add(tl);

  // solve
  auto* sv = app.add_subcommand("solve", "solve problems and explain each operator");
  std::string sv_problem, sv_corpus, sv_out = "-", sv_solver, sv_logicgen, sv_retriever;
  std::size_t sv_beam = 0;
  sv->add_option("--problem-json", sv_problem, "one problem as a JSON object file");
  sv->add_option("--corpus", sv_corpus, "corpus JSONL to solve");
  sv->add_option("--kb", kb_path, "knowledge base JSON")->capture_default_str();
  sv->add_option("--solver-ckpt", sv_solver, "solver checkpoint")->required();
  sv->add_option("--logicgen-ckpt", sv_logicgen, "logic generator checkpoint");
  sv->add_option("--retriever-ckpt", sv_retriever, "override the retriever named by the solver checkpoint");
  sv->add_option("--beam", sv_beam, "beam width (0: checkpoint default, 1: greedy)")->capture_default_str();
  sv->add_option("--out", sv_out, "output ('-' for stdout); JSONL predictions with --corpus")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "score predictions");
  std::string ev_preds, ev_corpus, ev_report = "-", ev_csv;
  ev->add_option("--preds", ev_preds, "predictions JSONL")->required();
  ev->add_option("--corpus", ev_corpus, "gold corpus JSONL")->required();
  ev->add_option("--report", ev_report, "report JSON ('-' for stdout)")->capture_default_str();
  ev->add_option("--csv", ev_csv, "per-size and per-formula tables as CSV");

  // ablate-prompts
  auto* ab = app.add_subcommand("ablate-prompts", "answer accuracy over prompt strategies and K");
  std::string ab_train, ab_test, ab_out = "-";
  ls::pipeline::AblationConfig ab_cfg;
  TrainFlags ab_rflags{ab_cfg.retriever_train}, ab_sflags{ab_cfg.solver_train};
  std::size_t ab_hidden = 64;
  double ab_dropout = 0.5;
  ab->add_option("--train", ab_train, "training corpus JSONL")->required();
  ab->add_option("--test", ab_test, "test corpus JSONL")->required();
  ab->add_option("--kb", kb_path, "knowledge base JSON")->capture_default_str();
  ab->add_option("--out", ab_out, "grid JSON ('-' for stdout)")->capture_default_str();
  ab->add_option("--K", ab_cfg.ks, "prompt counts")->capture_default_str();
  ab->add_option("--seeds", ab_cfg.seeds, "seeds to average over")->capture_default_str();
  ab->add_option("--hidden", ab_hidden, "hidden size of both models")->capture_default_str();
  ab->add_option("--dropout", ab_dropout, "encoder output dropout")->capture_default_str();
  ab->add_option("--beam", ab_cfg.beam, "beam width for test decoding")->capture_default_str();
  ab->add_option("--retriever-epochs", ab_rflags.tc.epochs)->capture_default_str();
  ab->add_option("--retriever-batch", ab_rflags.tc.batch)->capture_default_str();
  ab->add_option("--retriever-lr", ab_rflags.tc.lr)->capture_default_str();
  ab->add_option("--retriever-encoder-lr", ab_rflags.tc.encoder_lr)->capture_default_str();
  ab->add_option("--solver-epochs", ab_sflags.tc.epochs)->capture_default_str();
  ab->add_option("--solver-batch", ab_sflags.tc.batch)->capture_default_str();
  ab->add_option("--solver-lr", ab_sflags.tc.lr)->capture_default_str();
  ab->add_option("--solver-encoder-lr", ab_sflags.tc.encoder_lr)->capture_default_str();
  ab->add_option("--weight-decay", ab_sflags.tc.weight_decay)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!config_path.empty()) merge_config(*sub, config_path);
    const auto log = stderr_logger(quiet);

    if (sub == synth) {
      auto kb = ls::logic::load_kb(kb_path);
      ls::corpus::SynthConfig cfg;
      if (!synth_gen_config.empty()) cfg = ls::corpus::SynthConfig::from_json(read_json_file(synth_gen_config));
      cfg.count = synth_count;
      auto problems = ls::corpus::synth_generate(kb, cfg, synth_seed);
      std::ostringstream all;
      for (const auto& p : problems) all << ls::corpus::problem_to_json(p).dump() << '\n';
      write_text(synth_out, all.str());
      if (!synth_split.empty() || !synth_split_counts.empty()) {
        ls::corpus::CorpusSplit split;
        if (!synth_split.empty()) {
          auto r = parse_triple(synth_split, "--split");
          split = ls::corpus::split_corpus(problems, r[0], r[1], r[2], synth_seed);
        } else {
          auto c = parse_triple(synth_split_counts, "--split-counts");
          for (double x : c) {
            if (x < 0 || x != std::floor(x)) throw ls::Error(ls::Errc::ConfigError, "--split-counts needs whole numbers");
          }
          split = ls::corpus::split_corpus_counts(
              problems, {std::size_t(c[0]), std::size_t(c[1]), std::size_t(c[2])}, synth_seed);
        }
        const std::filesystem::path dir = synth_out_dir.empty() ? "." : synth_out_dir;
        std::filesystem::create_directories(dir);
        ls::corpus::save_corpus((dir / "train.jsonl").string(), split.train);
        ls::corpus::save_corpus((dir / "valid.jsonl").string(), split.valid);
        ls::corpus::save_corpus((dir / "test.jsonl").string(), split.test);
      }
      return 0;
    }

    if (sub == stats) {
      auto kb = ls::logic::load_kb(kb_path);
      auto problems = ls::corpus::load_corpus(stats_corpus, &kb);
      write_text(stats_out, ls::corpus::corpus_stats(problems).to_json(&kb).dump(2) + "\n");
      return 0;
    }

    if (sub == tr) {
      auto kb = ls::logic::load_kb(kb_path);
      auto problems = ls::corpus::load_corpus(tr_corpus, &kb);
      auto [model, summary] = ls::pipeline::train_retriever(problems, kb, tr_cfg, tr_flags.tc, log);
      ls::pipeline::save_retriever(tr_out, *model, tr_flags.tc, summary, echo_command(*sub));
      if (!tr_ranked.empty()) {
        std::ostringstream out;
        auto scores = model->score_many(problems, kb);
        for (std::size_t i = 0; i < problems.size(); ++i) {
          ordered_json j;
          j["problem_id"] = problems[i].id;
          j["ranked_ids"] = ls::retriever::rank_all(scores[i]);
          j["scores"] = scores[i];
          out << j.dump() << '\n';
        }
        write_text(tr_ranked, out.str());
      }
      return 0;
    }

    if (sub == ts) {
      auto kb = ls::logic::load_kb(kb_path);
      auto problems = ls::corpus::load_corpus(ts_corpus, &kb);
      ls::retriever::PromptConfig prompt{ts_k, ls::retriever::placement_from_name(ts_placement),
                                         ls::retriever::selection_from_name(ts_selection), ts_prompt_seed};
      std::unique_ptr<ls::retriever::RetrieverModel> retr;
      if (prompt.k > 0 && prompt.selection == ls::retriever::Selection::Retrieved) {
        if (ts_retriever.empty()) {
          throw ls::Error(ls::Errc::ConfigError, "--retriever-ckpt is required for retrieved prompts");
        }
        retr = ls::pipeline::load_retriever(ts_retriever);
      }
      auto prompts = ls::pipeline::build_prompts(
          problems, ls::pipeline::select_prompts(problems, kb, prompt, retr.get()), kb, prompt.placement);
      auto [model, summary] = ls::pipeline::train_solver(problems, prompts, kb, ts_cfg, ts_flags.tc, log);
      ls::pipeline::save_solver(ts_out, *model, ts_flags.tc, summary, prompt, ts_retriever, echo_command(*sub));
      return 0;
    }

    if (sub == tl) {
      auto kb = ls::logic::load_kb(kb_path);
      auto problems = ls::corpus::load_corpus(tl_corpus, &kb);
      auto loaded = ls::pipeline::load_solver(tl_solver);
      std::unique_ptr<ls::retriever::RetrieverModel> retr;
      if (loaded.prompt.k > 0 && loaded.prompt.selection == ls::retriever::Selection::Retrieved) {
        retr = ls::pipeline::load_retriever(loaded.retriever_ckpt);
      }
      auto prompts = ls::pipeline::build_prompts(
          problems, ls::pipeline::select_prompts(problems, kb, loaded.prompt, retr.get()), kb,
          loaded.prompt.placement);
      auto result =
          ls::pipeline::train_logicgen(problems, prompts, *loaded.model, kb, tl_cfg, tl_flags.tc, tl_all_gold, log);
      ls::pipeline::save_logicgen(tl_out, *result.model, tl_flags.tc, result.summary, tl_solver, tl_all_gold,
                                  result.problems_used, echo_command(*sub));
      return 0;
    }

    if (sub == sv) {
      if (sv_problem.empty() == sv_corpus.empty()) {
        throw ls::Error(ls::Errc::ConfigError, "give exactly one of --problem-json and --corpus");
      }
      auto kb = ls::logic::load_kb(kb_path);
      auto solver = ls::pipeline::Solver::load(
          kb, sv_solver, sv_logicgen.empty() ? std::nullopt : std::optional<std::string>(sv_logicgen),
          sv_retriever.empty() ? std::nullopt : std::optional<std::string>(sv_retriever));
      const std::size_t beam = sv_beam ? sv_beam : solver.solver_model().config().beam;
      if (!sv_problem.empty()) {
        auto problem = problem_for_solving(read_json_file(sv_problem), 0);
        auto result = solver.solve_all({problem}, beam).front();
        write_text(sv_out, result.to_json().dump(2) + "\n");
      } else {
        auto problems = ls::corpus::load_corpus(sv_corpus);
        std::ostringstream out;
        for (const auto& r : solver.solve_all(problems, beam)) {
          ordered_json j = r.prediction().to_json();
          j["value"] = r.value ? ordered_json(ls::format_rational(*r.value)) : ordered_json(nullptr);
          out << j.dump() << '\n';
        }
        write_text(sv_out, out.str());
      }
      return 0;
    }

    if (sub == ev) {
      auto problems = ls::corpus::load_corpus(ev_corpus);
      auto report = ls::metrics::evaluate_all(ls::metrics::load_predictions(ev_preds), problems);
      write_text(ev_report, report.to_json().dump(2) + "\n");
      if (!ev_csv.empty()) write_text(ev_csv, report.to_csv());
      return 0;
    }

    if (sub == ab) {
      auto kb = ls::logic::load_kb(kb_path);
      auto train = ls::corpus::load_corpus(ab_train, &kb);
      auto test = ls::corpus::load_corpus(ab_test, &kb);
      ab_cfg.retriever.hidden = ab_cfg.solver.hidden = ab_hidden;
      ab_cfg.retriever.dropout = ab_cfg.solver.dropout = ab_dropout;
      ab_rflags.tc.weight_decay = ab_sflags.tc.weight_decay;
      ab_cfg.retriever_train = ab_rflags.tc;
      ab_cfg.solver_train = ab_sflags.tc;
      for (std::size_t k : ab_cfg.ks) {
        if (k == 0 || k > kb.size()) throw ls::Error(ls::Errc::ConfigError, "K values must be in 1..T");
      }
      auto report = ls::pipeline::ablate_prompts(train, test, kb, ab_cfg, log);
      write_text(ab_out, report.to_json().dump(2) + "\n");
      return 0;
    }
  } catch (const ls::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
