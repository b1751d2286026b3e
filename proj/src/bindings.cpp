#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flowinfer/diagnostics.hpp"
#include "flowinfer/errors.hpp"
#include "flowinfer/workflow.hpp"

namespace py = pybind11;
using namespace flowinfer;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const FloatArray& array) {
    const py::buffer_info info = array.request();
    Shape shape;
    std::size_t numel = 1;
    for (const auto d : info.shape) {
        shape.push_back(static_cast<int>(d));
        numel *= static_cast<std::size_t>(d);
    }
    std::vector<float> data(numel);
    if (numel > 0) std::memcpy(data.data(), info.ptr, numel * sizeof(float));
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<float> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> out(shape);
    if (t.numel() > 0)
        std::memcpy(out.request().ptr, t.data.data(), t.numel() * sizeof(float));
    return out;
}

Tensor context_or_empty(const std::optional<FloatArray>& context) {
    if (!context) return Tensor::zeros({0});
    return tensor_from_array(*context);
}

TrainConfig make_train_config(int epochs, int batches_per_epoch, int batch_size, double lr,
                              int calibration_size, int validation_size, std::uint64_t seed,
                              const std::string& checkpoint, const std::string& schedule,
                              const std::string& mode) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batches_per_epoch = batches_per_epoch;
    cfg.batch_size = batch_size;
    cfg.initial_lr = lr;
    cfg.calibration_size = calibration_size;
    cfg.validation_size = validation_size;
    cfg.seed = seed;
    cfg.checkpoint_path = checkpoint;
    cfg.schedule = schedule_from_string(schedule);
    cfg.mode = train_mode_from_string(mode);
    return cfg;
}

py::dict history_dict(const TrainHistory& history) {
    py::dict out;
    out["step_loss"] = history.step_loss;
    out["val_loss"] = history.val_loss;
    out["skipped_batches"] = history.skipped_batches;
    out["best_epoch"] = history.best_epoch;
    out["best_val_loss"] = history.best_val_loss;
    return out;
}

// Owns the model alongside the amortizer so bound objects are self-contained.
struct BoundPosterior {
    GenerativeModel model;
    std::unique_ptr<PosteriorAmortizer> am;

    BoundPosterior(const std::string& model_name, std::uint64_t seed, const NetworkConfig& net)
        : model(builtin_model(model_name)) {
        Rng rng = Rng(seed).split(200);
        am = std::make_unique<PosteriorAmortizer>(model, posterior_config(net), rng);
    }
};

struct BoundComparison {
    GenerativeModel model;
    std::unique_ptr<ComparisonAmortizer> am;

    BoundComparison(const std::string& model_name, std::uint64_t seed, const NetworkConfig& net)
        : model(builtin_model(model_name)) {
        Rng rng = Rng(seed).split(200);
        am = std::make_unique<ComparisonAmortizer>(model, comparison_config(net), rng);
    }
};

NetworkConfig network_from_kwargs(int embedding_dim, const std::vector<int>& phi_hidden,
                                  const std::vector<int>& rho_hidden, int n_coupling,
                                  const std::vector<int>& coupling_hidden,
                                  const std::vector<int>& classifier_hidden) {
    NetworkConfig net;
    net.embedding_dim = embedding_dim;
    net.phi_hidden = phi_hidden;
    net.rho_hidden = rho_hidden;
    net.n_coupling = n_coupling;
    net.coupling_hidden = coupling_hidden;
    net.classifier_hidden = classifier_hidden;
    return net;
}

}  // namespace

PYBIND11_MODULE(_flowinfer, m) {
    m.doc() = "amortized simulation-based inference: simulators, amortizers, diagnostics";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

    m.def("builtin_models", [] {
        return std::vector<std::string>{"conjugate_gaussian", "gaussian_meanvar", "model_pair"};
    });

    m.def(
        "simulate",
        [](const std::string& model_name, int batch_size, std::uint64_t seed,
           std::optional<int> set_size) {
            GenerativeModel model = builtin_model(model_name);
            if (set_size) model = with_set_size(model, *set_size);
            Rng rng(seed);
            const SimulationBatch batch = sample_batch(model, batch_size, rng);
            return py::make_tuple(array_from_tensor(batch.params), array_from_tensor(batch.data),
                                  array_from_tensor(batch.context), batch.set_size);
        },
        py::arg("model"), py::arg("batch_size"), py::arg("seed"),
        py::arg("set_size") = std::nullopt,
        "Draw one simulated batch; returns (params, data, context, set_size).");

    py::class_<BoundPosterior>(m, "Posterior")
        .def(py::init([](const std::string& model, std::uint64_t seed, int embedding_dim,
                         const std::vector<int>& phi_hidden, const std::vector<int>& rho_hidden,
                         int n_coupling, const std::vector<int>& coupling_hidden) {
                 return new BoundPosterior(
                     model, seed,
                     network_from_kwargs(embedding_dim, phi_hidden, rho_hidden, n_coupling,
                                         coupling_hidden, {64, 64}));
             }),
             py::arg("model"), py::arg("seed") = 1, py::arg("embedding_dim") = 8,
             py::arg("phi_hidden") = std::vector<int>{64, 64},
             py::arg("rho_hidden") = std::vector<int>{64}, py::arg("n_coupling") = 4,
             py::arg("coupling_hidden") = std::vector<int>{64, 64})
        .def_property_readonly("ready", [](const BoundPosterior& p) { return p.am->ready(); })
        .def(
            "train",
            [](BoundPosterior& p, int epochs, int batches_per_epoch, int batch_size, double lr,
               int calibration_size, int validation_size, std::uint64_t seed,
               const std::string& checkpoint, const std::string& schedule,
               const std::string& mode) {
                const TrainHistory h =
                    train(*p.am, p.model,
                          make_train_config(epochs, batches_per_epoch, batch_size, lr,
                                            calibration_size, validation_size, seed, checkpoint,
                                            schedule, mode));
                return history_dict(h);
            },
            py::arg("epochs") = 1, py::arg("batches_per_epoch") = 100, py::arg("batch_size") = 64,
            py::arg("lr") = 5e-4, py::arg("calibration_size") = 10000,
            py::arg("validation_size") = 500, py::arg("seed") = 1, py::arg("checkpoint") = "",
            py::arg("schedule") = "cosine", py::arg("mode") = "online")
        .def(
            "sample",
            [](const BoundPosterior& p, const FloatArray& data, int n_draws, std::uint64_t seed,
               const std::optional<FloatArray>& context) {
                Rng rng(seed);
                return array_from_tensor(posterior_sample(*p.am, tensor_from_array(data),
                                                          context_or_empty(context), n_draws,
                                                          rng));
            },
            py::arg("data"), py::arg("n_draws"), py::arg("seed") = 1,
            py::arg("context") = std::nullopt,
            "Posterior draws [n_draws x param_dim] for one observed set [N x obs].")
        .def(
            "log_prob",
            [](const BoundPosterior& p, const FloatArray& data, const FloatArray& theta,
               const std::optional<FloatArray>& context) {
                return posterior_log_prob(*p.am, tensor_from_array(data),
                                          context_or_empty(context), tensor_from_array(theta));
            },
            py::arg("data"), py::arg("theta"), py::arg("context") = std::nullopt)
        .def("save",
             [](const BoundPosterior& p, const std::string& path) {
                 save_checkpoint(path, p.am->state_tensors());
             })
        .def("load", [](BoundPosterior& p, const std::string& path) {
            p.am->load_state(load_checkpoint(path));
        });

    py::class_<BoundComparison>(m, "Comparison")
        .def(py::init([](const std::string& model, std::uint64_t seed, int embedding_dim,
                         const std::vector<int>& phi_hidden, const std::vector<int>& rho_hidden,
                         const std::vector<int>& classifier_hidden) {
                 return new BoundComparison(
                     model, seed,
                     network_from_kwargs(embedding_dim, phi_hidden, rho_hidden, 4, {64, 64},
                                         classifier_hidden));
             }),
             py::arg("model"), py::arg("seed") = 1, py::arg("embedding_dim") = 8,
             py::arg("phi_hidden") = std::vector<int>{64, 64},
             py::arg("rho_hidden") = std::vector<int>{64},
             py::arg("classifier_hidden") = std::vector<int>{64, 64})
        .def_property_readonly("ready", [](const BoundComparison& c) { return c.am->ready(); })
        .def(
            "train",
            [](BoundComparison& c, int epochs, int batches_per_epoch, int batch_size, double lr,
               int calibration_size, int validation_size, std::uint64_t seed,
               const std::string& checkpoint, const std::string& schedule,
               const std::string& mode) {
                const TrainHistory h =
                    train(*c.am, c.model,
                          make_train_config(epochs, batches_per_epoch, batch_size, lr,
                                            calibration_size, validation_size, seed, checkpoint,
                                            schedule, mode));
                return history_dict(h);
            },
            py::arg("epochs") = 1, py::arg("batches_per_epoch") = 100, py::arg("batch_size") = 64,
            py::arg("lr") = 5e-4, py::arg("calibration_size") = 10000,
            py::arg("validation_size") = 500, py::arg("seed") = 1, py::arg("checkpoint") = "",
            py::arg("schedule") = "cosine", py::arg("mode") = "online")
        .def(
            "pmp",
            [](const BoundComparison& c, const FloatArray& data,
               const std::optional<FloatArray>& context) {
                return array_from_tensor(
                    predict_pmp(*c.am, tensor_from_array(data), context_or_empty(context)));
            },
            py::arg("data"), py::arg("context") = std::nullopt,
            "Posterior model probabilities for one observed set; sums to 1.")
        .def("save",
             [](const BoundComparison& c, const std::string& path) {
                 save_checkpoint(path, c.am->state_tensors());
             })
        .def("load", [](BoundComparison& c, const std::string& path) {
            c.am->load_state(load_checkpoint(path));
        });

    m.def(
        "mmd2_unbiased",
        [](const FloatArray& x, const FloatArray& y, double bandwidth) {
            return mmd2_unbiased(tensor_from_array(x), tensor_from_array(y), bandwidth);
        },
        py::arg("x"), py::arg("y"), py::arg("bandwidth"));

    m.def(
        "uniformity_test",
        [](const std::vector<int>& ranks, int n_draws, int n_bins) {
            const UniformityTest t = uniformity_test(ranks, n_draws, n_bins);
            return py::make_tuple(t.chi2, t.p);
        },
        py::arg("ranks"), py::arg("n_draws"), py::arg("n_bins") = 10,
        "Chi-squared uniformity test over ranks in [0, n_draws]; returns (chi2, p).");

    m.def("chi2_sf", &chi2_sf, py::arg("chi2"), py::arg("dof"));

    m.def(
        "run_command",
        [](const std::vector<std::string>& args) { return run_command(args); },
        py::arg("args"), "Run a CLI workflow in-process; returns the exit code.");
}
