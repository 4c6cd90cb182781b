// pfvg: train, sample, evaluate and benchmark the segment flow model.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pfvg/commands.hpp"

namespace {

void add_common(CLI::App* cmd, pfvg::CommandOptions& o) {
  cmd->add_option("--config", o.config, "key=value run configuration file");
  cmd->add_option("--out", o.out, "output directory (overrides output_dir)");
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Autoregressive segment generation with rectified flow and packed memory"};
  app.require_subcommand(1);
  pfvg::CommandOptions o;

  auto* train = app.add_subcommand("train", "two-stage training; writes checkpoints and losses.csv");
  add_common(train, o);
  train->add_option("--seed", o.seeds, "training seed (overrides seed)")->expected(1);
  train->add_option("--variant", o.variants, "squeeze variant A, B or C")->expected(1);
  train->add_option("--mode", o.modes, "stage-2 forcing mode: teacher, student:N, direct")
      ->expected(1);

  auto* generate = app.add_subcommand("generate", "autoregressive rollout from a checkpoint");
  add_common(generate, o);
  generate->add_option("--checkpoint", o.checkpoints, "model checkpoint")->required()->expected(1);
  generate->add_option("--seed", o.seeds, "sampling seed")->expected(1);
  generate->add_option("--segments", o.segments, "number of segments to generate");
  generate->add_option("--prompt", o.prompt,
                       "scene, e.g. shape=disc,object=0.9,background=0.1,vx=1,vy=0,x=8,y=8");
  generate->add_option("--video", o.video, "take prompt and image from this corpus video");

  auto* eval = app.add_subcommand("eval", "drift of autoregressive rollouts over the corpus");
  add_common(eval, o);
  eval->add_option("--checkpoint", o.checkpoints,
                   "checkpoint per mode, or one checkpoint for every mode");
  eval->add_option("--mode", o.modes, "label(s) of the evaluated training mode");
  eval->add_option("--seed", o.seeds, "rollout seed(s)");
  eval->add_option("--segments", o.segments, "segments per rollout (default 16)");
  eval->add_option("--video", o.video, "restrict to one corpus video");

  auto* bench = app.add_subcommand("bench", "memory update cost against full-history attention");
  add_common(bench, o);
  bench->add_option("--variant", o.variants, "squeeze variant(s) to time");
  bench->add_option("--lengths", o.lengths, "ascending history lengths (default 8 16 32 64)");
  bench->add_option("--repeats", o.repeats, "timing repeats, minimum kept");
  bench->add_option("--seed", o.seeds, "weight seed")->expected(1);

  auto* corpus = app.add_subcommand("make-corpus", "write the synthetic corpus to --out");
  add_common(corpus, o);
  corpus->add_option("--seed", o.seeds, "corpus seed (overrides corpus_seed)")->expected(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pfvg::kExitConfig;
  }
  const std::string name = app.get_subcommands().front()->get_name();
  return pfvg::run_command(name, o, std::cout, std::cerr);
}
