// Command-line driver: prepare few-shot episodes, run continual experiments,
// run ablations side by side, summarize result directories, and write a
// synthetic dataset.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fsclner/fsclner.hpp"

using namespace fsclner;
namespace fs = std::filesystem;

namespace {

struct DataOptions {
  std::string dataset;
  std::string schedule;
  std::string permutation = "P1";
  std::string anchors;
  std::string prepared;
};

struct Overrides {
  std::string config;
  std::optional<int> shots, mdt_per_class, epochs, batch_size, base_epochs, base_batch_size, d_model;
  std::optional<std::string> train_mode, eval_mode, mdt_format, head_mode, decode_rule;
  std::optional<double> alpha, beta, lr, base_lr, freeze_fraction;
};

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void add_data_options(CLI::App* app, DataOptions& d, bool need_anchors) {
  app->add_option("--dataset", d.dataset, "Directory with train.txt, dev.txt, test.txt")->required();
  app->add_option("--schedule", d.schedule, "Task schedule JSON (default: <dataset>/schedule.json)");
  app->add_option("--permutation", d.permutation, "Permutation id within the schedule file");
  if (need_anchors) {
    app->add_option("--anchors", d.anchors, "Representative-word table JSON (default: <dataset>/anchors.json)");
    app->add_option("--prepared", d.prepared, "Output directory of a previous 'prepare'");
  }
}

void add_overrides(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "Run configuration JSON; flags below override it");
  app->add_option("--shots", o.shots, "K mentions per new type in each incremental episode");
  app->add_option("--train-mode", o.train_mode, "toa or tof");
  app->add_option("--eval-mode", o.eval_mode, "eoa or eof");
  app->add_option("--mdt-per-class", o.mdt_per_class, "Demonstration templates per old type");
  app->add_option("--mdt-format", o.mdt_format, "anchor or entity");
  app->add_option("--alpha", o.alpha, "Distillation weight");
  app->add_option("--beta", o.beta, "Prompt-tuning weight");
  app->add_option("--head-mode", o.head_mode, "anchor or classifier");
  app->add_option("--decode-rule", o.decode_rule, "own_token or global_argmax");
  app->add_option("--epochs", o.epochs, "Epochs per incremental stage");
  app->add_option("--batch-size", o.batch_size, "Batch size in incremental stages");
  app->add_option("--lr", o.lr, "Learning rate in incremental stages");
  app->add_option("--freeze-fraction", o.freeze_fraction, "Fraction of lower encoder layers frozen after step 1");
  app->add_option("--base-epochs", o.base_epochs, "Epochs for the base stage");
  app->add_option("--base-batch-size", o.base_batch_size, "Batch size for the base stage");
  app->add_option("--base-lr", o.base_lr, "Learning rate for the base stage");
  app->add_option("--d-model", o.d_model, "Hidden size of the reference encoder");
}

RunConfig effective_config(const Overrides& o) {
  RunConfig c;
  if (!o.config.empty()) read_json_file(o.config).get_to(c);
  auto both = [&](auto apply) {
    apply(c.base);
    apply(c.incremental);
  };
  if (o.shots) c.incremental.shots = *o.shots;
  if (o.train_mode) both([&](StageConfig& s) { s.train_mode = parse_enum<TrainMode>(*o.train_mode, "train mode"); });
  if (o.eval_mode) both([&](StageConfig& s) { s.eval_mode = parse_enum<EvalMode>(*o.eval_mode, "eval mode"); });
  if (o.mdt_per_class) c.incremental.mdt_per_class = *o.mdt_per_class;
  if (o.mdt_format) both([&](StageConfig& s) { s.mdt_format = parse_enum<MdtFormat>(*o.mdt_format, "mdt format"); });
  if (o.alpha) both([&](StageConfig& s) { s.loss.alpha = *o.alpha; });
  if (o.beta) both([&](StageConfig& s) { s.loss.beta = *o.beta; });
  if (o.head_mode) {
    const auto h = parse_enum<HeadMode>(*o.head_mode, "head mode");
    both([&](StageConfig& s) { s.head_mode = h; });
    c.model.head_mode = h;
  }
  if (o.decode_rule) c.eval.decode_rule = parse_enum<DecodeRule>(*o.decode_rule, "decode rule");
  if (o.epochs) c.incremental.epochs = *o.epochs;
  if (o.batch_size) c.incremental.batch_size = *o.batch_size;
  if (o.lr) c.incremental.lr = *o.lr;
  if (o.freeze_fraction) c.incremental.freeze_fraction = *o.freeze_fraction;
  if (o.base_epochs) c.base.epochs = *o.base_epochs;
  if (o.base_batch_size) c.base.batch_size = *o.base_batch_size;
  if (o.base_lr) c.base.lr = *o.base_lr;
  if (o.d_model) c.model.d_model = *o.d_model;
  c.validate();
  return c;
}

std::string default_path(const std::string& given, const std::string& dataset, const char* name) {
  if (!given.empty()) return given;
  const fs::path p = fs::path(dataset) / name;
  if (!fs::exists(p)) throw Error(Errc::Io, std::string("no --") + (name[0] == 's' ? "schedule" : "anchors") +
                                                " given and " + p.string() + " does not exist");
  return p.string();
}

struct Inputs {
  CorpusBundle bundle;
  TaskSchedule schedule;
  RepWordTable rep_words;
  std::string schedule_path, anchors_path;
};

Inputs load_inputs(const DataOptions& d, bool with_anchors) {
  Inputs in;
  const fs::path root(d.dataset);
  if (!fs::is_directory(root)) throw Error(Errc::Io, "dataset directory " + d.dataset + " not found");
  in.bundle.base_pool = parse_conll_file((root / "train.txt").string());
  in.bundle.incremental_pool = parse_conll_file((root / "dev.txt").string());
  in.bundle.test = parse_conll_file((root / "test.txt").string());
  in.schedule_path = default_path(d.schedule, d.dataset, "schedule.json");
  in.schedule = load_schedule(in.schedule_path, d.permutation);
  if (with_anchors) {
    in.anchors_path = default_path(d.anchors, d.dataset, "anchors.json");
    in.rep_words = load_rep_words(in.anchors_path);
  }
  return in;
}

fs::path episode_file(const fs::path& root, std::uint64_t seed, int t) {
  return root / ("seed_" + std::to_string(seed)) / ("step_" + std::to_string(t) + ".txt");
}

json data_echo(const DataOptions& d, const Inputs& in, const std::vector<std::uint64_t>& seeds) {
  return {{"dataset", d.dataset},     {"schedule", in.schedule_path}, {"permutation", d.permutation},
          {"anchors", in.anchors_path}, {"prepared", d.prepared},     {"seeds", seeds}};
}

// ---------------------------------------------------------------------------
// prepare

int cmd_prepare(const DataOptions& d, int shots, const std::vector<std::uint64_t>& seeds, const std::string& out) {
  if (shots < 1) throw Error(Errc::InvalidConfig, "--shots must be >= 1");
  const Inputs in = load_inputs(d, false);
  json episodes = json::array();
  for (auto seed : seeds) {
    for (int t = 2; t <= in.schedule.size(); ++t) {
      const auto ep = sample_episode(in.bundle.incremental_pool, in.schedule, t, shots, seed);
      const fs::path file = episode_file(out, seed, t);
      fs::create_directories(file.parent_path());
      std::ostringstream text;
      serialize_conll(ep, text);
      write_text_file(file.string(), text.str());
      json mentions = json::object();
      const auto counts = mention_counts(ep);
      for (const auto& type : in.schedule.task(t)) mentions[type] = counts.count(type) ? counts.at(type) : 0;
      episodes.push_back({{"seed", seed},
                          {"step", t},
                          {"file", fs::relative(file, out).generic_string()},
                          {"sentences", ep.size()},
                          {"mentions", mentions}});
      std::cout << file.string() << ": " << ep.size() << " sentences\n";
    }
  }
  const json manifest = {{"command", "prepare"},
                         {"dataset", d.dataset},
                         {"schedule", in.schedule_path},
                         {"permutation", d.permutation},
                         {"shots", shots},
                         {"seeds", seeds},
                         {"episodes", episodes}};
  write_text_file((fs::path(out) / "manifest.json").string(), manifest.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// run / ablate

struct RunOptions {
  bool checkpoints = false;
  bool dump_predictions = false;
};

std::vector<RunResult> run_seeds(const Inputs& in, const DataOptions& d, const RunConfig& base_cfg,
                                 const std::vector<std::uint64_t>& seeds, const fs::path& out, const RunOptions& ro,
                                 std::vector<std::string>& written) {
  std::vector<RunResult> results;
  for (auto seed : seeds) {
    RunConfig cfg = base_cfg;
    cfg.set_seed(seed);
    CorpusBundle bundle = in.bundle;
    if (!d.prepared.empty())
      for (int t = 2; t <= in.schedule.size(); ++t)
        bundle.episodes[t] = parse_conll_file(episode_file(d.prepared, seed, t).string());
    const fs::path dir = out / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    StageObserver<TinyRefModel> observer = [&](int t, const TinyRefModel& m, const AnchorVocabulary& v,
                                               const WordTokenizer& tok) {
      const std::string step = std::to_string(t);
      if (ro.checkpoints) {
        const auto p = dir / ("checkpoint_step" + step + ".json");
        save_checkpoint(p.string(), m, v, tok, cfg);
        written.push_back(fs::relative(p, out).generic_string());
      }
      if (ro.dump_predictions) {
        const StageConfig& sc = t == 1 ? cfg.base : cfg.incremental;
        const auto eval = build_eval(in.bundle.test, in.schedule, t, sc.eval_mode);
        std::ostringstream dump;
        evaluate_stage(m, v, tok, eval, in.schedule.seen_types(t), cfg.eval, &dump);
        const auto p = dir / ("predictions_step" + step + ".tsv");
        write_text_file(p.string(), dump.str());
        written.push_back(fs::relative(p, out).generic_string());
      }
    };
    RunResult r = run_continual(bundle, in.schedule, in.rep_words, cfg, observer);
    write_text_file((dir / "results.json").string(), result_to_json(r).dump(2) + "\n");
    write_text_file((dir / "timing.json").string(), json{{"stage_seconds", r.stage_seconds}}.dump(2) + "\n");
    written.push_back(fs::relative(dir / "results.json", out).generic_string());
    written.push_back(fs::relative(dir / "timing.json", out).generic_string());
    std::cout << "seed " << seed << ":";
    for (double m : r.macro_per_step()) std::cout << ' ' << pct(m);
    if (r.steps.size() >= 2) std::cout << "  Avg>=2 " << pct(r.avg_ge2());
    std::cout << '\n';
    results.push_back(std::move(r));
  }
  return results;
}

std::vector<double> mean_per_step(const std::vector<RunResult>& runs) {
  std::vector<double> m(runs.front().steps.size(), 0.0);
  for (const auto& r : runs)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += r.steps[i].metrics.macro_f1;
  for (auto& x : m) x /= static_cast<double>(runs.size());
  return m;
}

std::string step_header(std::size_t steps, const char* sep) {
  std::string h;
  for (std::size_t i = 1; i <= steps; ++i) h += std::string(sep) + "step_" + std::to_string(i);
  return h + (steps >= 2 ? std::string(sep) + "avg_ge2" : "");
}

std::string csv_row(const std::string& prefix, const std::vector<double>& steps) {
  std::string row = prefix;
  for (double v : steps) row += "," + pct(v);
  if (steps.size() >= 2) row += "," + pct(avg_ge2(steps));
  return row + "\n";
}

std::string md_row(const std::string& label, const std::vector<double>& steps) {
  std::string row = "| " + label + " |";
  for (double v : steps) row += " " + pct(v) + " |";
  if (steps.size() >= 2) row += " " + pct(avg_ge2(steps)) + " |";
  return row + "\n";
}

std::string md_header(std::size_t steps, const std::string& first) {
  std::string h = "| " + first + " |", rule = "|---|";
  for (std::size_t i = 1; i <= steps; ++i) {
    h += " Step " + std::to_string(i) + " |";
    rule += "---|";
  }
  if (steps >= 2) {
    h += " Avg>=2 |";
    rule += "---|";
  }
  return h + "\n" + rule + "\n";
}

void write_summaries(const fs::path& out, const std::vector<std::pair<std::string, std::vector<RunResult>>>& variants,
                     const std::string& title, std::vector<std::string>& written) {
  const std::size_t steps = variants.front().second.front().steps.size();
  std::string csv = "variant,seed" + step_header(steps, ",") + "\n";
  std::string md = "# " + title + "\n\nMacro-F1 (%), mean over seeds.\n\n" + md_header(steps, "Variant");
  std::string plot = "variant,step,macro_f1\n";
  for (const auto& [name, runs] : variants) {
    for (const auto& r : runs) csv += csv_row(name + "," + std::to_string(r.seed), r.macro_per_step());
    const auto mean = mean_per_step(runs);
    csv += csv_row(name + ",mean", mean);
    md += md_row(name + " (" + std::to_string(runs.size()) + " seeds)", mean);
    for (std::size_t i = 0; i < mean.size(); ++i) plot += name + "," + std::to_string(i + 1) + "," + pct(mean[i]) + "\n";
  }
  md += "\nPer seed:\n\n" + md_header(steps, "Variant / seed");
  for (const auto& [name, runs] : variants)
    for (const auto& r : runs) md += md_row(name + " / " + std::to_string(r.seed), r.macro_per_step());
  write_text_file((out / "aggregate.csv").string(), csv);
  write_text_file((out / "table.md").string(), md);
  write_text_file((out / "plot_series.csv").string(), plot);
  for (const char* f : {"aggregate.csv", "table.md", "plot_series.csv"}) written.push_back(f);
}

void write_manifest(const fs::path& out, const std::string& command, const json& extra,
                    std::vector<std::string> written) {
  written.push_back("effective_config.json");
  std::sort(written.begin(), written.end());
  json files = json::object();
  for (const auto& f : written) files[f] = slurp(out / f).size();
  json m = {{"command", command}, {"files", files}};
  m.update(extra);
  write_text_file((out / "manifest.json").string(), m.dump(2) + "\n");
}

int cmd_run(const DataOptions& d, const Overrides& o, const std::vector<std::uint64_t>& seeds, const std::string& out_dir,
            const RunOptions& ro) {
  const RunConfig cfg = effective_config(o);
  const Inputs in = load_inputs(d, true);
  const fs::path out(out_dir);
  fs::create_directories(out);
  write_text_file((out / "effective_config.json").string(),
                  json{{"run", cfg}, {"data", data_echo(d, in, seeds)}}.dump(2) + "\n");
  std::vector<std::string> written;
  auto results = run_seeds(in, d, cfg, seeds, out, ro, written);
  write_summaries(out, {{"full", results}}, "Run " + in.schedule.permutation_id(), written);
  write_manifest(out, "run", {{"permutation", in.schedule.permutation_id()}, {"seeds", seeds}}, written);
  return 0;
}

int cmd_ablate(const DataOptions& d, const Overrides& o, const std::vector<std::uint64_t>& seeds,
               const std::vector<std::string>& switches, const std::string& out_dir, const RunOptions& ro) {
  const RunConfig cfg = effective_config(o);
  // validate every variant before spending time on any of them
  std::vector<std::pair<std::string, RunConfig>> variants{{"full", cfg}};
  for (const auto& s : switches) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    for (std::string p; std::getline(ss, p, '+');) parts.push_back(p);
    variants.emplace_back(s, ablate(cfg, parts));
    variants.back().second.validate();
  }
  const Inputs in = load_inputs(d, true);
  const fs::path out(out_dir);
  fs::create_directories(out);
  json echo = {{"data", data_echo(d, in, seeds)}, {"variants", json::object()}};
  for (const auto& [name, c] : variants) echo["variants"][name] = c;
  write_text_file((out / "effective_config.json").string(), echo.dump(2) + "\n");
  std::vector<std::string> written;
  std::vector<std::pair<std::string, std::vector<RunResult>>> results;
  for (const auto& [name, c] : variants) {
    std::cout << "== " << name << '\n';
    std::vector<std::string> w;
    results.emplace_back(name, run_seeds(in, d, c, seeds, out / name, ro, w));
    for (const auto& f : w) written.push_back(name + "/" + f);
  }
  write_summaries(out, results, "Ablation " + in.schedule.permutation_id(), written);
  write_manifest(out, "ablate", {{"permutation", in.schedule.permutation_id()}, {"seeds", seeds}, {"switches", switches}},
                 written);
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct Found {
  std::string label;
  RunResult result;
};

std::string reorg_lower(Reorg r) {
  std::string s(reorg_name(r));
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

int cmd_report(const std::string& dir, const std::string& reference, const std::string& out_file) {
  std::vector<Found> runs;
  if (fs::is_directory(dir)) {
    std::vector<fs::path> paths;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() == "results.json") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths)
      runs.push_back({fs::relative(p.parent_path(), dir).generic_string(), result_from_json(read_json_file(p.string()))});
  }
  if (runs.empty()) throw Error(Errc::NoResultsFound, "no results.json under " + dir);

  std::map<std::string, std::vector<const Found*>> groups;
  for (const auto& f : runs) {
    const auto mode = f.result.steps.empty() ? std::string("none") : std::string(reorg_name(f.result.steps.front().metrics.eval_mode));
    groups[mode].push_back(&f);
  }
  std::vector<std::vector<std::string>> ref_rows;
  if (!reference.empty()) {
    std::ifstream in(reference);
    if (!in) throw Error(Errc::Io, "cannot open " + reference);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
      if (cells.size() >= 5) ref_rows.push_back(cells);
    }
  }

  std::ostringstream md;
  md << "# Results under " << dir << "\n";
  for (const auto& [mode, members] : groups) {
    std::size_t steps = 0;
    for (const auto* f : members) steps = std::max(steps, f->result.steps.size());
    md << "\n## " << mode << "\n\nMacro-F1 (%)\n\n" << md_header(steps, "Run");
    for (const auto* f : members) md << md_row(f->label, f->result.macro_per_step());
    md << "\nPer-type F1 (%) at the final step\n\n";
    for (const auto* f : members) {
      if (f->result.steps.empty()) continue;
      const auto& last = f->result.steps.back().metrics;
      md << "- " << f->label << ":";
      for (const auto& [type, s] : last.per_type) md << ' ' << type << ' ' << pct(s.f1);
      md << "\n";
    }
    if (!ref_rows.empty()) {
      const auto& cfg = members.front()->result.config.incremental;
      const std::string shots = std::to_string(cfg.shots), train = json(cfg.train_mode).get<std::string>();
      std::string block;
      for (const auto& r : ref_rows) {
        if (r[1] != shots || r[2] != train || r[3] != reorg_lower(members.front()->result.steps.front().metrics.eval_mode))
          continue;
        block += "| " + r[0] + " |";
        for (std::size_t i = 4; i < r.size(); ++i) block += " " + r[i] + " |";
        block += "\n";
      }
      if (!block.empty()) {
        md << "\nPublished reference (" << shots << "-shot, " << train << ", " << mode << ")\n\n"
           << md_header(ref_rows.front().size() - 5, "Method") << block;
      }
    }
  }
  std::cout << md.str();
  if (!out_file.empty()) write_text_file(out_file, md.str());
  return 0;
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const SyntheticSpec& spec, const std::string& out_dir) {
  const auto c = make_synthetic(spec);
  const fs::path out(out_dir);
  fs::create_directories(out);
  auto put = [&](const char* name, const std::vector<LabeledSentence>& v) {
    std::ostringstream text;
    serialize_conll(v, text);
    write_text_file((out / name).string(), text.str());
  };
  put("train.txt", c.bundle.base_pool);
  put("dev.txt", c.bundle.incremental_pool);
  put("test.txt", c.bundle.test);
  write_text_file((out / "anchors.json").string(), json(c.rep_words).dump(2) + "\n");
  write_text_file((out / "schedule.json").string(), json{{"P1", c.schedule.tasks()}}.dump(2) + "\n");
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot continual NER with anchor-word prompts and memory demonstration templates"};
  app.require_subcommand(1);

  DataOptions data;
  Overrides over;
  RunOptions ro;
  std::vector<std::uint64_t> seeds{1};
  std::string out;

  auto* prepare = app.add_subcommand("prepare", "Sample and write the K-shot episode for every incremental step");
  add_data_options(prepare, data, false);
  int prep_shots = 5;
  prepare->add_option("--shots", prep_shots, "K mentions per new type");
  prepare->add_option("--seed", seeds, "One or more seeds")->expected(1, -1);
  prepare->add_option("--out", out, "Output directory")->required();

  auto* run = app.add_subcommand("run", "Run the continual-learning loop for each seed");
  add_data_options(run, data, true);
  add_overrides(run, over);
  run->add_option("--seed", seeds, "One or more seeds")->expected(1, -1);
  run->add_option("--out", out, "Output directory")->required();
  run->add_flag("--save-checkpoints", ro.checkpoints, "Write a checkpoint after every stage");
  run->add_flag("--dump-predictions", ro.dump_predictions, "Write per-token predictions after every stage");

  auto* abl = app.add_subcommand("ablate", "Run the full method and each ablation with shared seeds");
  add_data_options(abl, data, true);
  add_overrides(abl, over);
  std::vector<std::string> switches;
  abl->add_option("--switches", switches, "no_mdt, mdt_entity_format, no_apt; join with '+' to combine")
      ->required()
      ->expected(1, -1);
  abl->add_option("--seed", seeds, "One or more seeds")->expected(1, -1);
  abl->add_option("--out", out, "Output directory")->required();
  abl->add_flag("--save-checkpoints", ro.checkpoints, "Write a checkpoint after every stage");

  auto* rep = app.add_subcommand("report", "Summarize every results.json under a directory");
  std::string results_dir, reference, report_out;
  rep->add_option("results", results_dir, "Result directory")->required();
  rep->add_option("--reference", reference, "CSV of published numbers to print alongside");
  rep->add_option("--out", report_out, "Also write the summary to this file");

  auto* syn = app.add_subcommand("synth", "Write a synthetic dataset (train/dev/test, anchors.json, schedule.json)");
  SyntheticSpec spec;
  std::uint64_t synth_seed = 0;
  syn->add_option("--seed", synth_seed, "Generator seed");
  syn->add_option("--base-sentences", spec.base_sentences);
  syn->add_option("--incremental-sentences", spec.incremental_sentences);
  syn->add_option("--test-sentences", spec.test_sentences);
  syn->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) return cmd_prepare(data, prep_shots, seeds, out);
    if (*run) return cmd_run(data, over, seeds, out, ro);
    if (*abl) return cmd_ablate(data, over, seeds, switches, out, ro);
    if (*rep) return cmd_report(results_dir, reference, report_out);
    if (*syn) {
      spec.seed = synth_seed;
      return cmd_synth(spec, out);
    }
  } catch (const Error& e) {
    std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
