#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowinfer/amortizers.hpp"
#include "flowinfer/training.hpp"

namespace flowinfer {

enum class AmortizerKind { Posterior, Likelihood, Comparison };

AmortizerKind amortizer_kind_from_string(const std::string& s);

// Network hyperparameters shared by every amortizer kind.
struct NetworkConfig {
    int embedding_dim = 8;
    std::vector<int> phi_hidden = {64, 64};
    std::vector<int> rho_hidden = {64};
    int n_coupling = 4;
    std::vector<int> coupling_hidden = {64, 64};
    std::vector<int> classifier_hidden = {64, 64};
    int n_models = 2;
};

struct SimulateOptions {
    int n_sets = 100;
};

struct SampleOptions {
    int n_draws = 1000;
};

struct DiagnoseOptions {
    int recovery_sims = 200;
    int recovery_draws = 250;
    int sbc_sims = 500;
    int sbc_draws = 100;
    int sbc_bins = 10;
    int contraction_sims = 200;
    int contraction_draws = 250;
    int misspec_observed = 50;
    int misspec_nulls = 99;
    int misspec_ref = 100;
};

// One JSON file drives a whole run; --seed/--out flags override the file.
struct WorkflowConfig {
    std::string model;
    AmortizerKind amortizer = AmortizerKind::Posterior;
    NetworkConfig network;
    TrainConfig train;
    SimulateOptions simulate;
    SampleOptions sample;
    DiagnoseOptions diagnose;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
};

// Validates a JSON object against the documented schema, filling defaults.
// Unknown keys, type mismatches, and out-of-range values raise ConfigError
// naming the offending key.
WorkflowConfig parse_config(const std::string& text);

PosteriorConfig posterior_config(const NetworkConfig& net);
LikelihoodConfig likelihood_config(const NetworkConfig& net);
ComparisonConfig comparison_config(const NetworkConfig& net);

// Rows of a simulate-format CSV (param_*, data_<row>_<col>, context_*).
struct DatasetFile {
    Tensor params;             // [n x d]; d may be 0
    std::vector<Tensor> sets;  // each [N x obs]
    Tensor contexts;           // [n x k]; k may be 0
};

DatasetFile parse_batch_csv(std::istream& is);
DatasetFile load_datasets(const std::string& path);

// argv without the program name -> process exit code: 0 success, 1 runtime
// failure, 2 usage or config error (usage text goes to the error stream).
int run_command(const std::vector<std::string>& args);

}  // namespace flowinfer
