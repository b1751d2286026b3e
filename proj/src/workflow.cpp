#include "flowinfer/workflow.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "flowinfer/diagnostics.hpp"
#include "flowinfer/errors.hpp"

namespace flowinfer {

namespace fs = std::filesystem;
using nlohmann::json;

AmortizerKind amortizer_kind_from_string(const std::string& s) {
    if (s == "posterior") return AmortizerKind::Posterior;
    if (s == "likelihood") return AmortizerKind::Likelihood;
    if (s == "comparison") return AmortizerKind::Comparison;
    throw ConfigError("config key 'amortizer' must be one of \"posterior\", \"likelihood\", "
                      "\"comparison\"; got \"" +
                      s + "\"");
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

[[noreturn]] void key_error(const std::string& key, const std::string& expected) {
    throw ConfigError("config key '" + key + "' must be " + expected);
}

int get_int(const json& v, const std::string& key, int lo) {
    if (!v.is_number_integer())
        key_error(key, "an integer >= " + std::to_string(lo));
    const long long raw = v.get<long long>();
    if (raw < lo || raw > INT32_MAX)
        key_error(key, "an integer >= " + std::to_string(lo));
    return static_cast<int>(raw);
}

double get_positive(const json& v, const std::string& key) {
    if (!v.is_number()) key_error(key, "a positive number");
    const double raw = v.get<double>();
    if (!(raw > 0.0)) key_error(key, "a positive number");
    return raw;
}

std::string get_string(const json& v, const std::string& key) {
    if (!v.is_string()) key_error(key, "a string");
    return v.get<std::string>();
}

std::vector<int> get_int_array(const json& v, const std::string& key) {
    if (!v.is_array()) key_error(key, "an array of integers >= 1");
    std::vector<int> out;
    for (const json& e : v) {
        if (!e.is_number_integer() || e.get<long long>() < 1)
            key_error(key, "an array of integers >= 1");
        out.push_back(static_cast<int>(e.get<long long>()));
    }
    return out;
}

void require_object(const json& v, const std::string& key) {
    if (!v.is_object()) key_error(key, "an object");
}

void parse_network(const json& obj, NetworkConfig& net) {
    require_object(obj, "network");
    for (const auto& [key, value] : obj.items()) {
        const std::string path = "network." + key;
        if (key == "embedding_dim") net.embedding_dim = get_int(value, path, 1);
        else if (key == "phi_hidden") net.phi_hidden = get_int_array(value, path);
        else if (key == "rho_hidden") net.rho_hidden = get_int_array(value, path);
        else if (key == "n_coupling") net.n_coupling = get_int(value, path, 1);
        else if (key == "coupling_hidden") net.coupling_hidden = get_int_array(value, path);
        else if (key == "classifier_hidden") net.classifier_hidden = get_int_array(value, path);
        else if (key == "n_models") net.n_models = get_int(value, path, 2);
        else throw ConfigError("unknown config key '" + path + "'");
    }
}

void parse_train(const json& obj, TrainConfig& train) {
    require_object(obj, "train");
    for (const auto& [key, value] : obj.items()) {
        const std::string path = "train." + key;
        if (key == "epochs") train.epochs = get_int(value, path, 1);
        else if (key == "batches_per_epoch") train.batches_per_epoch = get_int(value, path, 1);
        else if (key == "batch_size") train.batch_size = get_int(value, path, 1);
        else if (key == "lr") train.initial_lr = get_positive(value, path);
        else if (key == "schedule") {
            const std::string s = get_string(value, path);
            if (s != "cosine" && s != "constant")
                key_error(path, "\"cosine\" or \"constant\"");
            train.schedule = schedule_from_string(s);
        } else if (key == "mode") {
            const std::string s = get_string(value, path);
            if (s != "online" && s != "offline") key_error(path, "\"online\" or \"offline\"");
            train.mode = train_mode_from_string(s);
        } else if (key == "calibration_size") train.calibration_size = get_int(value, path, 2);
        else if (key == "validation_size") train.validation_size = get_int(value, path, 1);
        else throw ConfigError("unknown config key '" + path + "'");
    }
}

void parse_simulate(const json& obj, SimulateOptions& sim) {
    require_object(obj, "simulate");
    for (const auto& [key, value] : obj.items()) {
        const std::string path = "simulate." + key;
        if (key == "n_sets") sim.n_sets = get_int(value, path, 1);
        else throw ConfigError("unknown config key '" + path + "'");
    }
}

void parse_sample(const json& obj, SampleOptions& sample) {
    require_object(obj, "sample");
    for (const auto& [key, value] : obj.items()) {
        const std::string path = "sample." + key;
        if (key == "n_draws") sample.n_draws = get_int(value, path, 1);
        else throw ConfigError("unknown config key '" + path + "'");
    }
}

void parse_diagnose(const json& obj, DiagnoseOptions& diag) {
    require_object(obj, "diagnose");
    for (const auto& [key, value] : obj.items()) {
        const std::string path = "diagnose." + key;
        if (key == "recovery_sims") diag.recovery_sims = get_int(value, path, 2);
        else if (key == "recovery_draws") diag.recovery_draws = get_int(value, path, 1);
        else if (key == "sbc_sims") diag.sbc_sims = get_int(value, path, 10);
        else if (key == "sbc_draws") diag.sbc_draws = get_int(value, path, 1);
        else if (key == "sbc_bins") diag.sbc_bins = get_int(value, path, 2);
        else if (key == "contraction_sims") diag.contraction_sims = get_int(value, path, 2);
        else if (key == "contraction_draws") diag.contraction_draws = get_int(value, path, 2);
        else if (key == "misspec_observed") diag.misspec_observed = get_int(value, path, 2);
        else if (key == "misspec_nulls") diag.misspec_nulls = get_int(value, path, 19);
        else if (key == "misspec_ref") diag.misspec_ref = get_int(value, path, 2);
        else throw ConfigError("unknown config key '" + path + "'");
    }
}

}  // namespace

WorkflowConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config must be a JSON object");

    WorkflowConfig cfg;
    bool have_model = false;
    for (const auto& [key, value] : root.items()) {
        if (key == "model") {
            cfg.model = get_string(value, "model");
            try {
                builtin_model(cfg.model);
            } catch (const std::exception&) {
                key_error("model", "the name of a built-in model (conjugate_gaussian, "
                                   "gaussian_meanvar, model_pair)");
            }
            have_model = true;
        } else if (key == "amortizer") {
            cfg.amortizer = amortizer_kind_from_string(get_string(value, "amortizer"));
        } else if (key == "seed") {
            if (!value.is_number_integer() || value.get<long long>() < 0)
                key_error("seed", "a non-negative integer");
            cfg.seed = value.get<std::uint64_t>();
        } else if (key == "out") {
            cfg.out_dir = get_string(value, "out");
            if (cfg.out_dir.empty()) key_error("out", "a non-empty string");
        } else if (key == "network") {
            parse_network(value, cfg.network);
        } else if (key == "train") {
            parse_train(value, cfg.train);
        } else if (key == "simulate") {
            parse_simulate(value, cfg.simulate);
        } else if (key == "sample") {
            parse_sample(value, cfg.sample);
        } else if (key == "diagnose") {
            parse_diagnose(value, cfg.diagnose);
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    if (!have_model) key_error("model", "present (a built-in model name)");
    cfg.train.seed = cfg.seed;
    return cfg;
}

PosteriorConfig posterior_config(const NetworkConfig& net) {
    PosteriorConfig cfg;
    cfg.summary.embedding_dim = net.embedding_dim;
    cfg.summary.phi_hidden = net.phi_hidden;
    cfg.summary.rho_hidden = net.rho_hidden;
    cfg.flow.n_layers = net.n_coupling;
    cfg.flow.hidden = net.coupling_hidden;
    return cfg;
}

LikelihoodConfig likelihood_config(const NetworkConfig& net) {
    LikelihoodConfig cfg;
    cfg.flow.n_layers = net.n_coupling;
    cfg.flow.hidden = net.coupling_hidden;
    return cfg;
}

ComparisonConfig comparison_config(const NetworkConfig& net) {
    ComparisonConfig cfg;
    cfg.summary.embedding_dim = net.embedding_dim;
    cfg.summary.phi_hidden = net.phi_hidden;
    cfg.summary.rho_hidden = net.rho_hidden;
    cfg.classifier_hidden = net.classifier_hidden;
    cfg.n_models = net.n_models;
    return cfg;
}

// ---------------------------------------------------------------------------
// Dataset CSV ingestion

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

// "prefix_3" -> 3; nullopt when the name does not match
std::optional<int> suffix_index(const std::string& name, const std::string& prefix) {
    if (name.size() <= prefix.size() || name.compare(0, prefix.size(), prefix) != 0)
        return std::nullopt;
    int value = 0;
    for (std::size_t i = prefix.size(); i < name.size(); ++i) {
        if (name[i] < '0' || name[i] > '9') return std::nullopt;
        value = value * 10 + (name[i] - '0');
    }
    return value;
}

struct ColumnRef {
    enum class Kind { Param, Data, Context } kind;
    int row = 0;  // observation row for Data
    int col = 0;
};

}  // namespace

DatasetFile parse_batch_csv(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw FormatError("dataset CSV is empty");
    if (!header.empty() && header.back() == '\r') header.pop_back();

    int d = 0, n_rows = 0, obs = 0, k = 0;
    std::vector<ColumnRef> columns;
    for (const std::string& name : split_csv_line(header)) {
        if (auto j = suffix_index(name, "param_")) {
            columns.push_back({ColumnRef::Kind::Param, 0, *j});
            d = std::max(d, *j + 1);
            continue;
        }
        if (auto j = suffix_index(name, "context_")) {
            columns.push_back({ColumnRef::Kind::Context, 0, *j});
            k = std::max(k, *j + 1);
            continue;
        }
        if (name.compare(0, 5, "data_") == 0) {
            const std::size_t sep = name.find('_', 5);
            if (sep != std::string::npos) {
                const auto i = suffix_index(name.substr(0, sep), "data_");
                const auto j = suffix_index("c_" + name.substr(sep + 1), "c_");
                if (i && j) {
                    columns.push_back({ColumnRef::Kind::Data, *i, *j});
                    n_rows = std::max(n_rows, *i + 1);
                    obs = std::max(obs, *j + 1);
                    continue;
                }
            }
        }
        throw FormatError("dataset CSV has an unrecognized column '" + name + "'");
    }
    if (n_rows == 0 || obs == 0) throw FormatError("dataset CSV has no data_<row>_<col> columns");
    const std::size_t expected_cols = static_cast<std::size_t>(d) +
                                      static_cast<std::size_t>(n_rows) * obs +
                                      static_cast<std::size_t>(k);
    if (columns.size() != expected_cols)
        throw FormatError("dataset CSV columns do not form complete param/data/context blocks");

    std::vector<std::vector<float>> params, contexts;
    std::vector<Tensor> sets;
    std::string line;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != columns.size())
            throw FormatError("dataset CSV line " + std::to_string(line_no) + " has " +
                              std::to_string(cells.size()) + " cells, expected " +
                              std::to_string(columns.size()));
        std::vector<float> p(static_cast<std::size_t>(d), 0.0f);
        std::vector<float> c(static_cast<std::size_t>(k), 0.0f);
        Tensor set = Tensor::zeros({n_rows, obs});
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const char* text = cells[i].c_str();
            char* end = nullptr;
            const double value = std::strtod(text, &end);
            if (end == text || *end != '\0')
                throw FormatError("dataset CSV line " + std::to_string(line_no) +
                                  " has a non-numeric cell '" + cells[i] + "'");
            const ColumnRef& ref = columns[i];
            if (ref.kind == ColumnRef::Kind::Param)
                p[static_cast<std::size_t>(ref.col)] = static_cast<float>(value);
            else if (ref.kind == ColumnRef::Kind::Context)
                c[static_cast<std::size_t>(ref.col)] = static_cast<float>(value);
            else
                set.at(ref.row, ref.col) = static_cast<float>(value);
        }
        params.push_back(std::move(p));
        contexts.push_back(std::move(c));
        sets.push_back(std::move(set));
    }
    if (sets.empty()) throw FormatError("dataset CSV has a header but no rows");

    DatasetFile out;
    const int n = static_cast<int>(sets.size());
    out.params = Tensor::zeros({n, d});
    out.contexts = Tensor::zeros({n, k});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) out.params.at(i, j) = params[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        for (int j = 0; j < k; ++j) out.contexts.at(i, j) = contexts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    out.sets = std::move(sets);
    return out;
}

DatasetFile load_datasets(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read dataset file '" + path + "'");
    return parse_batch_csv(is);
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

void write_text_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    body(os);
    os.flush();
    if (!os) throw IoError("failed writing '" + path.string() + "'");
}

void print_float(std::ostream& os, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.8e", v);
    os << buf;
}

Tensor context_row(const DatasetFile& file, int i) {
    const int k = file.contexts.cols();
    std::vector<float> v(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) v[static_cast<std::size_t>(j)] = file.contexts.at(i, j);
    return Tensor({k}, std::move(v));
}

fs::path ensure_out_dir(const WorkflowConfig& cfg) {
    const fs::path out(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory '" + out.string() + "'");
    return out;
}

fs::path checkpoint_path(const WorkflowConfig& cfg, const std::optional<std::string>& flag) {
    if (flag) return fs::path(*flag);
    return fs::path(cfg.out_dir) / "checkpoint.bin";
}

std::unique_ptr<Trainable> make_amortizer(const WorkflowConfig& cfg, const GenerativeModel& model,
                                          Rng& rng) {
    switch (cfg.amortizer) {
        case AmortizerKind::Posterior:
            return std::make_unique<PosteriorAmortizer>(model, posterior_config(cfg.network), rng);
        case AmortizerKind::Likelihood:
            return std::make_unique<LikelihoodAmortizer>(model, likelihood_config(cfg.network),
                                                         rng);
        case AmortizerKind::Comparison:
            return std::make_unique<ComparisonAmortizer>(model, comparison_config(cfg.network),
                                                         rng);
    }
    throw ContractError("unreachable amortizer kind");
}

PosteriorAmortizer load_posterior(const WorkflowConfig& cfg, const GenerativeModel& model,
                                  const fs::path& ckpt, const char* subcommand) {
    if (cfg.amortizer != AmortizerKind::Posterior)
        throw ConfigError(std::string("subcommand '") + subcommand +
                          "' needs config key 'amortizer' set to \"posterior\"");
    Rng rng = Rng(cfg.seed).split(200);
    PosteriorAmortizer am(model, posterior_config(cfg.network), rng);
    am.load_state(load_checkpoint(ckpt.string()));
    return am;
}

int cmd_simulate(const WorkflowConfig& cfg) {
    const GenerativeModel model = builtin_model(cfg.model);
    Rng rng = Rng(cfg.seed).split(201);
    const SimulationBatch batch = sample_batch(model, cfg.simulate.n_sets, rng);
    write_text_file(ensure_out_dir(cfg) / "simulations.csv",
                    [&](std::ostream& os) { export_batch_csv(batch, os); });
    return 0;
}

int cmd_train(const WorkflowConfig& cfg) {
    const GenerativeModel model = builtin_model(cfg.model);
    const fs::path out = ensure_out_dir(cfg);
    Rng init = Rng(cfg.seed).split(200);
    std::unique_ptr<Trainable> am = make_amortizer(cfg, model, init);

    TrainConfig tc = cfg.train;
    tc.checkpoint_path = (out / "checkpoint.bin").string();
    const TrainHistory history = train(*am, model, tc);

    write_text_file(out / "history.csv", [&](std::ostream& os) {
        os << "series,index,value\n";
        for (std::size_t i = 0; i < history.step_loss.size(); ++i) {
            os << "step_loss," << i << ',';
            print_float(os, history.step_loss[i]);
            os << '\n';
        }
        for (std::size_t e = 0; e < history.val_loss.size(); ++e) {
            os << "val_loss," << e << ',';
            print_float(os, history.val_loss[e]);
            os << '\n';
        }
    });
    return 0;
}

int cmd_sample(const WorkflowConfig& cfg, const std::string& data_path,
               const std::optional<std::string>& ckpt_flag) {
    const GenerativeModel model = builtin_model(cfg.model);
    const PosteriorAmortizer am =
        load_posterior(cfg, model, checkpoint_path(cfg, ckpt_flag), "sample");
    const DatasetFile file = load_datasets(data_path);

    Rng rng = Rng(cfg.seed).split(202);
    const int d = model.param_dim;
    write_text_file(ensure_out_dir(cfg) / "posterior_draws.csv", [&](std::ostream& os) {
        os << "dataset,draw";
        for (int j = 0; j < d; ++j) os << ",param_" << j;
        os << '\n';
        for (std::size_t i = 0; i < file.sets.size(); ++i) {
            const Tensor draws = posterior_sample(am, file.sets[i], context_row(file, static_cast<int>(i)),
                                                  cfg.sample.n_draws, rng);
            for (int r = 0; r < draws.rows(); ++r) {
                os << i << ',' << r;
                for (int j = 0; j < d; ++j) {
                    os << ',';
                    print_float(os, draws.at(r, j));
                }
                os << '\n';
            }
        }
    });
    return 0;
}

int cmd_diagnose(const WorkflowConfig& cfg, const std::optional<std::string>& data_path,
                 const std::optional<std::string>& ckpt_flag) {
    const GenerativeModel model = builtin_model(cfg.model);
    const PosteriorAmortizer am =
        load_posterior(cfg, model, checkpoint_path(cfg, ckpt_flag), "diagnose");
    const fs::path out = ensure_out_dir(cfg);
    const DiagnoseOptions& opt = cfg.diagnose;

    Rng recovery_rng = Rng(cfg.seed).split(203);
    const RecoveryReport rec =
        recovery(am, model, opt.recovery_sims, opt.recovery_draws, recovery_rng);
    write_text_file(out / "recovery.csv",
                    [&](std::ostream& os) { write_recovery_csv(rec, os); });

    Rng sbc_rng = Rng(cfg.seed).split(204);
    const SbcResult sbc = sbc_ranks(am, model, opt.sbc_sims, opt.sbc_draws, sbc_rng, opt.sbc_bins);
    write_text_file(out / "sbc_ranks.csv",
                    [&](std::ostream& os) { write_sbc_ranks_csv(sbc, os); });
    write_text_file(out / "sbc_test.csv", [&](std::ostream& os) { write_sbc_test_csv(sbc, os); });

    Rng contraction_rng = Rng(cfg.seed).split(205);
    const std::vector<double> contraction =
        posterior_contraction(am, model, opt.contraction_sims, opt.contraction_draws,
                              contraction_rng);
    write_text_file(out / "contraction.csv", [&](std::ostream& os) {
        os << "param,contraction\n";
        for (std::size_t j = 0; j < contraction.size(); ++j) {
            os << j << ',';
            print_float(os, contraction[j]);
            os << '\n';
        }
    });

    std::vector<Tensor> observed;
    if (data_path) {
        observed = load_datasets(*data_path).sets;
    } else {
        Rng observed_rng = Rng(cfg.seed).split(207);
        for (int i = 0; i < opt.misspec_observed; ++i) {
            const SimulationBatch b = sample_batch(model, 1, observed_rng);
            observed.push_back(Tensor({b.data.shape[1], b.data.shape[2]},
                                      std::vector<float>(b.data.data.begin(), b.data.data.end())));
        }
    }
    Rng misspec_rng = Rng(cfg.seed).split(206);
    const MisspecResult mis = misspecification_test(am, model, observed, opt.misspec_nulls,
                                                    opt.misspec_ref, misspec_rng);
    write_text_file(out / "misspec.csv", [&](std::ostream& os) { write_misspec_csv(mis, os); });
    return 0;
}

int cmd_compare(const WorkflowConfig& cfg, const std::string& data_path,
                const std::optional<std::string>& ckpt_flag) {
    if (cfg.amortizer != AmortizerKind::Comparison)
        throw ConfigError("subcommand 'compare' needs config key 'amortizer' set to "
                          "\"comparison\"");
    const GenerativeModel model = builtin_model(cfg.model);
    Rng rng = Rng(cfg.seed).split(200);
    ComparisonAmortizer am(model, comparison_config(cfg.network), rng);
    am.load_state(load_checkpoint(checkpoint_path(cfg, ckpt_flag).string()));

    const DatasetFile file = load_datasets(data_path);
    write_text_file(ensure_out_dir(cfg) / "pmp.csv", [&](std::ostream& os) {
        os << "dataset";
        for (int m = 0; m < am.n_models; ++m) os << ",pmp_" << m;
        os << '\n';
        for (std::size_t i = 0; i < file.sets.size(); ++i) {
            const Tensor pmp = predict_pmp(am, file.sets[i], context_row(file, static_cast<int>(i)));
            os << i;
            for (int m = 0; m < am.n_models; ++m) {
                os << ',';
                print_float(os, pmp.at(m));
            }
            os << '\n';
        }
    });
    return 0;
}

constexpr const char* kUsage =
    "usage: flowinfer <simulate|train|sample|diagnose|compare> --config PATH\n"
    "  common flags:      [--seed N] [--out DIR]\n"
    "  sample flags:      --data PATH [--n-draws K] [--checkpoint PATH]\n"
    "  diagnose flags:    [--data PATH] [--checkpoint PATH]\n"
    "  compare flags:     --data PATH [--checkpoint PATH]\n";

std::string read_config_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read config file '" + path + "'");
    std::ostringstream buffer;
    buffer << is.rdbuf();
    return buffer.str();
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"amortized simulation-based inference workflows"};
    app.name("flowinfer");
    app.require_subcommand(1);

    struct SubOptions {
        std::string config;
        std::optional<std::uint64_t> seed;
        std::optional<std::string> out;
        std::optional<std::string> data;
        std::optional<int> n_draws;
        std::optional<std::string> checkpoint;
    };
    SubOptions opt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "JSON config file")->required();
        sub->add_option("--seed", opt.seed, "override the config seed");
        sub->add_option("--out", opt.out, "override the output directory");
        return sub;
    };
    CLI::App* cmd_sim = add_common(app.add_subcommand("simulate", "write simulations as CSV"));
    CLI::App* cmd_tr = add_common(app.add_subcommand("train", "train an amortizer"));
    CLI::App* cmd_sa = add_common(app.add_subcommand("sample", "draw posterior samples"));
    cmd_sa->add_option("--data", opt.data, "dataset CSV")->required();
    cmd_sa->add_option("--n-draws", opt.n_draws, "draws per dataset");
    cmd_sa->add_option("--checkpoint", opt.checkpoint, "checkpoint path");
    CLI::App* cmd_di = add_common(app.add_subcommand("diagnose", "run model criticism"));
    cmd_di->add_option("--data", opt.data, "observed dataset CSV");
    cmd_di->add_option("--checkpoint", opt.checkpoint, "checkpoint path");
    CLI::App* cmd_co = add_common(app.add_subcommand("compare", "posterior model probabilities"));
    cmd_co->add_option("--data", opt.data, "dataset CSV")->required();
    cmd_co->add_option("--checkpoint", opt.checkpoint, "checkpoint path");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("flowinfer");
    for (const std::string& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        std::cout << kUsage;
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n' << kUsage;
        return 2;
    }

    try {
        WorkflowConfig cfg = parse_config(read_config_file(opt.config));
        if (opt.seed) {
            cfg.seed = *opt.seed;
            cfg.train.seed = *opt.seed;
        }
        if (opt.out) cfg.out_dir = *opt.out;
        if (opt.n_draws) {
            if (*opt.n_draws < 1) throw ConfigError("flag '--n-draws' must be a positive integer");
            cfg.sample.n_draws = *opt.n_draws;
        }

        if (cmd_sim->parsed()) return cmd_simulate(cfg);
        if (cmd_tr->parsed()) return cmd_train(cfg);
        if (cmd_sa->parsed()) return cmd_sample(cfg, *opt.data, opt.checkpoint);
        if (cmd_di->parsed()) return cmd_diagnose(cfg, opt.data, opt.checkpoint);
        if (cmd_co->parsed()) return cmd_compare(cfg, *opt.data, opt.checkpoint);
        throw ContractError("no subcommand parsed");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace flowinfer
