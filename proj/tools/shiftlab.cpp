// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "CLI11.hpp"
#include "shiftlab/harness.hpp"

namespace h = shiftlab::harness;

int main(int argc, char **argv) {
  CLI::App app{"shiftlab: label-shift test-time adaptation experiments"};
  app.require_subcommand(1);

  h::CommandOptions opt;
  std::string config, out, variant, model, refiner;
  std::uint64_t seed = 0;

  auto add = [&](const char *name, const char *help) {
    CLI::App *sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "JSON config file")->required();
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "override the seed");
    return sub;
  };
  CLI::App *pretrain = add("pretrain", "train the source classifier");
  CLI::App *inter = add("intermediate", "train the prediction refiner");
  inter->add_option("--model", model, "classifier file");
  inter->add_option("--variant", variant, "unified or split")
      ->check(CLI::IsMember({"unified", "split"}));
  CLI::App *adapt = add("adapt", "run test-time adaptation");
  adapt->add_option("--model", model, "classifier file");
  adapt->add_option("--refiner", refiner, "refiner file");
  CLI::App *toy = add("toy-verify", "check the four-class closed forms");
  toy->add_flag("--phi-fault", opt.phi_fault, "use a wrong normal CDF")
      ->group("");
  CLI::App *sweep = add("sweep", "pretrain, train and adapt over a grid");
  sweep->add_option("--variant", variant, "unified or split")
      ->check(CLI::IsMember({"unified", "split"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : h::kConfigError;
  }

  return h::guarded(
      [&] {
        opt.config = config;
        if (!out.empty())
          opt.out = out;
        if (!model.empty())
          opt.model = model;
        if (!refiner.empty())
          opt.refiner = refiner;
        if (!variant.empty())
          opt.variant = h::parse_variant(variant);
        for (CLI::App *sub : app.get_subcommands())
          if (sub->count("--seed"))
            opt.seed = seed;
        if (pretrain->parsed())
          return h::cmd_pretrain(opt, std::cout);
        if (inter->parsed())
          return h::cmd_intermediate(opt, std::cout);
        if (adapt->parsed())
          return h::cmd_adapt(opt, std::cout);
        if (toy->parsed())
          return h::cmd_toy_verify(opt, std::cout);
        return h::cmd_sweep(opt, std::cout);
      },
      std::cerr);
}
