// factsum command-line driver.
//
//   factsum <prepare|retrieve|train|summarize|evaluate|ablate> --config run.json
//
// Errors are reported on stderr as a single line "error: <kind>: <message>".

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "factsum/error.hpp"
#include "factsum/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  std::optional<std::string> mode;
  bool no_entities = false;
  bool with_entities = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)")->required();
  cmd->add_option("--seed", o.seed, "Override embedder and training seeds");
}

int run(const std::string& name, const Options& o) {
  factsum::RunConfig cfg = factsum::load_run_config(o.config);
  factsum::Overrides ov;
  ov.seed = o.seed;
  ov.k = o.k;
  if (o.mode) ov.mode = factsum::parse_guidance_mode(*o.mode);
  factsum::apply_overrides(cfg, ov);

  const bool with_entities = !o.no_entities;
  factsum::StageResult r;
  if (name == "prepare") {
    r = factsum::cmd_prepare(cfg);
  } else if (name == "retrieve") {
    r = factsum::cmd_retrieve(cfg);
  } else if (name == "train") {
    r = factsum::cmd_train(cfg);
  } else if (name == "summarize") {
    r = factsum::cmd_summarize(cfg, with_entities);
  } else if (name == "evaluate") {
    r = factsum::cmd_evaluate(cfg, with_entities);
  } else {
    r = factsum::cmd_ablate(cfg);
  }
  std::cout << r.command << ": " << r.summary.dump() << "\n";
  for (const auto& p : r.outputs) std::cout << "  wrote " << p.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entity-driven, fact-aware summarization pipeline"};
  app.require_subcommand(1);
  Options o;

  auto* prepare = app.add_subcommand("prepare", "NER, clustering and pseudo-document construction");
  auto* retrieve = app.add_subcommand("retrieve", "Retrieve top-k facts per document");
  auto* train = app.add_subcommand("train", "Train the summarizer");
  auto* summarize = app.add_subcommand("summarize", "Decode summaries with beam search");
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions");
  auto* ablate = app.add_subcommand("ablate", "Sweep the number of retrieved facts");

  for (auto* cmd : {prepare, retrieve, train, summarize, evaluate, ablate}) add_common(cmd, o);
  retrieve->add_option("--k", o.k, "Facts per document");
  for (auto* cmd : {train, summarize, evaluate}) {
    cmd->add_option("--mode", o.mode, "vanilla | entities | entities+facts")
        ->check(CLI::IsMember({"vanilla", "entities", "entities+facts"}));
  }
  for (auto* cmd : {summarize, evaluate}) {
    auto* no = cmd->add_flag("--no-entities", o.no_entities, "Withhold guidance at inference");
    auto* with = cmd->add_flag("--with-entities", o.with_entities, "Feed guidance at inference (default)");
    no->excludes(with);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return run(name, o);
  } catch (const factsum::Error& e) {
    std::cerr << "error: " << factsum::to_string(e.kind()) << ": " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
  }
  return 1;
}
