// Command-line driver for incremental expert training and fusion runs.
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "wsf/baselines/baselines.hpp"
#include "wsf/common/binary_io.hpp"
#include "wsf/common/error.hpp"
#include "wsf/data/corpus_io.hpp"
#include "wsf/eval/reports.hpp"
#include "wsf/multisite/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wsf;

namespace {

constexpr int kOk = 0, kUsage = 2, kData = 3, kDivergence = 4;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "pipeline config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--out", c.out, "run directory")->capture_default_str();
}

multisite::PipelineConfig make_config(const Common& c) {
  multisite::PipelineConfig cfg = c.config.empty() ? multisite::PipelineConfig{} : multisite::load_pipeline_config(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  return cfg;
}

// Later commands work on an existing run; --config/--seed must agree with it when given.
multisite::Run open_run(const Common& c) {
  auto run = multisite::Run::open(c.out);
  if (c.seed && *c.seed != run.config().seed) {
    throw CLI::ValidationError("--seed", "run " + c.out + " was created with seed " + std::to_string(run.config().seed));
  }
  if (!c.config.empty() && json(make_config(c)) != json(run.config())) {
    throw CLI::ValidationError("--config", "differs from the config stored in " + c.out);
  }
  return run;
}

void summary(json j) { std::cout << j.dump() << std::endl; }

json averages(const eval::MetricsReport& report) {
  json j = json::object();
  for (const auto& m : report.methods()) j[m] = report.average(m).acc;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental expert training with weighted score fusion"};
  app.require_subcommand(1);

  Common common;
  bool force = false;
  std::string mode_name, kind_name, split_name = "internal";
  bool attention = false, efficiency = false;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic multi-site corpus and start a run");
  add_common(gen, common);
  gen->add_flag("--force", force, "replace an existing run directory");

  auto* base = app.add_subcommand("train-base", "train the base expert at the local site");
  add_common(base, common);

  auto* step = app.add_subcommand("step", "remote fine-tune on the next site and export feature bundles");
  add_common(step, common);

  auto* fuse = app.add_subcommand("train-fusion", "train a fusion model on the latest bundles");
  add_common(fuse, common);
  fuse->add_option("--mode", mode_name, "sf|attn|nmd")->required()->check(CLI::IsMember({"sf", "attn", "nmd"}));

  auto* base_line = app.add_subcommand("baseline", "run a comparison method");
  add_common(base_line, common);
  base_line->add_option("--kind", kind_name, "maxlogit|msp|routing|oracle|finetune-constant|finetune-expand")
      ->required()
      ->check(CLI::IsMember({"maxlogit", "msp", "routing", "oracle", "finetune-constant", "finetune-expand"}));

  auto* evaluate = app.add_subcommand("evaluate", "score every available method");
  add_common(evaluate, common);
  evaluate->add_option("--split", split_name, "internal|external")->check(CLI::IsMember({"internal", "external"}));

  auto* report = app.add_subcommand("report", "attention histograms and timing curves");
  add_common(report, common);
  report->add_flag("--attention", attention, "attention histograms and entropies");
  report->add_flag("--efficiency", efficiency, "cumulative training and inference time");

  auto* pipeline = app.add_subcommand("pipeline", "every stage end to end");
  add_common(pipeline, common);
  pipeline->add_flag("--force", force, "replace an existing run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    auto fresh_dir = [&] {
      if (force && fs::exists(fs::path(common.out) / "config.json")) fs::remove_all(common.out);
    };
    if (gen->parsed()) {
      fresh_dir();
      const auto run = multisite::Run::create(common.out, make_config(common));
      std::size_t examples = 0;
      for (const auto& s : run.corpus().sites) examples += s.examples.size();
      for (const auto& s : run.corpus().externals) examples += s.examples.size();
      char checksum[20];
      std::snprintf(checksum, sizeof checksum, "%016llx",
                    static_cast<unsigned long long>(data::corpus_checksum(run.corpus())));
      summary({{"command", "gen-data"},
               {"out", common.out},
               {"seed", run.config().seed},
               {"sites", run.corpus().sites.size() + run.corpus().externals.size()},
               {"examples", examples},
               {"checksum", checksum}});
    } else if (base->parsed()) {
      auto run = open_run(common);
      const auto& e = run.train_base();
      summary({{"command", "train-base"}, {"expert", e.id}, {"best_val_accuracy", e.log.best_val_accuracy},
               {"seconds", e.log.seconds}});
    } else if (step->parsed()) {
      auto run = open_run(common);
      const auto& e = run.run_step();
      summary({{"command", "step"}, {"step", run.completed_steps()}, {"expert", e.id},
               {"best_val_accuracy", e.log.best_val_accuracy}, {"transfers", run.transfer_log().size()}});
    } else if (fuse->parsed()) {
      auto run = open_run(common);
      const auto mode = fusion::fusion_mode_from_string(mode_name);
      run.train_fusion(mode);
      summary({{"command", "train-fusion"}, {"mode", fusion::to_string(mode)}, {"step", run.completed_steps()},
               {"seconds", run.timing().steps.back().fusion.at(fusion::to_string(mode))}});
    } else if (base_line->parsed()) {
      auto run = open_run(common);
      json j = {{"command", "baseline"}, {"kind", kind_name}};
      if (kind_name == "oracle") {
        run.run_oracle();
        j["step"] = run.completed_steps();
      } else if (kind_name == "finetune-constant" || kind_name == "finetune-expand") {
        run.run_naive(kind_name == "finetune-constant" ? expert::HeadMode::Constant : expert::HeadMode::Expand);
        j["step"] = run.completed_steps();
      } else {
        const auto method = baselines::to_string(baselines::baseline_kind_from_string(kind_name));
        j["internal_accuracy"] = run.evaluate(true).report.average(method).acc;
      }
      summary(j);
    } else if (evaluate->parsed()) {
      auto run = open_run(common);
      const auto result = run.evaluate(split_name == "internal");
      summary({{"command", "evaluate"}, {"split", split_name}, {"csv", "metrics_" + split_name + ".csv"},
               {"average_accuracy", averages(result.report)}});
    } else if (report->parsed()) {
      if (!attention && !efficiency) throw CLI::ValidationError("report", "pass --attention and/or --efficiency");
      auto run = open_run(common);
      json j = {{"command", "report"}};
      if (attention) {
        const auto hists = eval::write_attention_report(run.dir());
        json ent = json::object();
        for (const auto& m : {"attn-wSF", "nmd-wSF"}) {
          const auto path = run.dir() / "attention_internal.csv";
          const auto recs = eval::read_attention_csv(read_file(path), true);
          bool any = false;
          for (const auto& r : recs) any = any || r.mode == m;
          if (any) ent[m] = eval::mean_entropy(recs, m);
        }
        j["attention_histograms"] = hists.size();
        j["internal_mean_entropy"] = ent;
      }
      if (efficiency) {
        if (!fs::exists(run.dir() / "inference.json")) run.measure_inference();
        const auto points = eval::write_efficiency_report(run.dir());
        json last = json::object();
        for (const auto& p : points) last[p.method] = p.seconds;
        j["cumulative_seconds"] = last;
      }
      summary(j);
    } else if (pipeline->parsed()) {
      fresh_dir();
      const auto result = multisite::run_incremental_pipeline(common.out, make_config(common));
      eval::write_attention_report(common.out);
      eval::write_efficiency_report(common.out);
      summary({{"command", "pipeline"}, {"out", common.out}, {"internal", averages(result.internal.report)},
               {"external", averages(result.external.report)}});
    }
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ProtocolError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const TrainingDivergence& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDivergence;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
