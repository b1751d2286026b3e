#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flowinfer/generative.hpp"
#include "flowinfer/tensor.hpp"

namespace flowinfer {

// initial_lr * 0.5 * (1 + cos(pi * step / total)); clamped past the end
double cosine_lr(int step, int total_steps, double initial_lr);

// Scales all gradients by max_norm/|g| when the joint norm exceeds max_norm.
void clip_global_norm(std::vector<Tensor>& grads, double max_norm);

// Adam with bias correction; eps sits inside the square root. Moments are
// kept in double so trajectories are reproducible bit-for-bit.
class AdamState {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    explicit AdamState(const std::vector<Tensor*>& params);

    // Skips the update and throws TrainingError if any gradient is
    // non-finite; state is untouched in that case.
    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr);
    int steps_taken() const { return t_; }

private:
    std::vector<std::vector<double>> m_, v_;
    int t_ = 0;
};

enum class Schedule { Constant, Cosine };
enum class TrainMode { Online, Offline };

Schedule schedule_from_string(const std::string& s);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
    int epochs = 1;
    int batches_per_epoch = 100;
    int batch_size = 64;
    double initial_lr = 5e-4;
    Schedule schedule = Schedule::Cosine;
    TrainMode mode = TrainMode::Online;
    std::uint64_t seed = 1;
    std::string checkpoint_path;     // empty disables checkpoint writes
    int calibration_size = 10000;    // simulations used to fit the configurator
    int validation_size = 500;       // held-out simulations from a dedicated stream
};

struct TrainHistory {
    std::vector<double> step_loss;  // one entry per executed optimizer step
    std::vector<double> val_loss;   // one entry per epoch
    std::vector<double> epoch_seconds;  // wall clock, informational only
    int skipped_batches = 0;
    int best_epoch = -1;
    double best_val_loss = 0.0;
};

// What the loop needs from an amortizer: calibration, parameters, losses,
// and a named-tensor serialization of its full state.
class Trainable {
public:
    virtual ~Trainable() = default;
    virtual void prepare(const GenerativeModel& model, int calibration_size, Rng& rng) = 0;
    virtual bool ready() const = 0;
    virtual std::vector<Tensor*> parameters() = 0;
    // Loss on the batch plus gradients aligned with parameters().
    virtual double loss_and_gradients(const SimulationBatch& batch,
                                      std::vector<Tensor>& grads) = 0;
    virtual double loss_value(const SimulationBatch& batch) = 0;
    virtual std::vector<std::pair<std::string, Tensor>> state_tensors() const = 0;
    virtual void load_state(const std::vector<std::pair<std::string, Tensor>>& state) = 0;
};

// Runs epochs x batches_per_epoch optimizer steps (online: fresh batches;
// offline: a fixed pre-simulated set), evaluates validation loss per epoch,
// writes a checkpoint per epoch, and retains the best-validation parameters.
// Simulation failures skip the batch; more than 10% skips abort the run.
TrainHistory train(Trainable& amortizer, const GenerativeModel& model, const TrainConfig& cfg);

// Binary checkpoint: magic "BFC1", u16 version=1, u16 flags=0, u32 tensor
// count; per tensor u32 name length, name, u32 rank, u32 dims..., raw
// little-endian float32 data; trailing u32 CRC32 of all preceding bytes.
// Metadata rides along as scalar tensors named "meta.<key>".
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

}  // namespace flowinfer
