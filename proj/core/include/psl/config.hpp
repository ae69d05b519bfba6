#pragma once

#include <string>

#include "psl/bounds.hpp"
#include "psl/planner.hpp"
#include "psl/simulator.hpp"

namespace psl {

// Parsed run configuration: schema-validated, unknown keys rejected, all
// units SI. The scenario's strata caps and (optionally) the analysis
// constants come from a warm-up pass over the generated datasets.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  Scenario scenario;          // fully assembled (profile, counts, caps)
  DatasetSpec dataset;
  SimConfig sim;
  BoundParams bound;          // per-round data when the config carries it
  bool bound_rounds_given = false;
};

RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text);

std::string plan_to_json(const RoundPlan& plan);
RoundPlan plan_from_json(const std::string& text);
std::string report_to_json(const SolverReport& report);
std::string breakdown_to_json(const BoundBreakdown& b);

// GP instance exchange for the `gp solve` subcommand:
// {"vars": ["x","y"], "objective": [{"c":1,"exp":{"x":1}}],
//  "ineq": [[{...},...]], "eq": [{...}]}
struct GpInstance {
  gp::VarTable table;
  gp::GpProgram program;
};
GpInstance gp_from_json(const std::string& text);
std::string gp_solution_to_json(const GpInstance& inst,
                                const gp::SolveResult& result);

}  // namespace psl
