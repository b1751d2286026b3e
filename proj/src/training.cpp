#include "flowinfer/training.hpp"

#include <zlib.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "flowinfer/errors.hpp"

namespace flowinfer {

double cosine_lr(int step, int total_steps, double initial_lr) {
    if (step < 0 || total_steps < 1) throw ContractError("cosine_lr needs step >= 0, total >= 1");
    if (step > total_steps) step = total_steps;
    return initial_lr * 0.5 *
           (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) / total_steps));
}

void clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (float v : g.data) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (Tensor& g : grads)
        for (float& v : g.data) v = static_cast<float>(v * scale);
}

Schedule schedule_from_string(const std::string& s) {
    if (s == "constant") return Schedule::Constant;
    if (s == "cosine") return Schedule::Cosine;
    throw ConfigError("unknown schedule '" + s + "' (expected constant or cosine)");
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "online") return TrainMode::Online;
    if (s == "offline") return TrainMode::Offline;
    throw ConfigError("unknown training mode '" + s + "' (expected online or offline)");
}

AdamState::AdamState(const std::vector<Tensor*>& params) {
    for (const Tensor* p : params) {
        m_.emplace_back(p->numel(), 0.0);
        v_.emplace_back(p->numel(), 0.0);
    }
}

void AdamState::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                     double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw ContractError("adam: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape != grads[i].shape)
            throw ShapeError("adam: gradient shape " + shape_str(grads[i].shape) +
                             " does not match parameter " + shape_str(params[i]->shape));
        if (!grads[i].all_finite())
            throw TrainingError("adam: non-finite gradient encountered; step skipped");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const double gj = g.data[j];
            m_[i][j] = beta1 * m_[i][j] + (1.0 - beta1) * gj;
            v_[i][j] = beta2 * v_[i][j] + (1.0 - beta2) * gj * gj;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            p.data[j] = static_cast<float>(static_cast<double>(p.data[j]) -
                                           lr * mhat / std::sqrt(vhat + eps));
        }
    }
}

namespace {

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.batches_per_epoch < 1) throw ConfigError("batches_per_epoch must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(cfg.initial_lr > 0.0)) throw ConfigError("initial_lr must be > 0");
    if (cfg.calibration_size < 2) throw ConfigError("calibration_size must be >= 2");
    if (cfg.validation_size < 1) throw ConfigError("validation_size must be >= 1");
}

}  // namespace

TrainHistory train(Trainable& am, const GenerativeModel& model, const TrainConfig& cfg) {
    validate(cfg);
    Rng master(cfg.seed);
    Rng calib_rng = master.split(101);
    Rng val_rng = master.split(102);
    Rng train_rng = master.split(103);
    Rng offline_rng = master.split(104);

    if (!am.ready()) am.prepare(model, cfg.calibration_size, calib_rng);

    std::vector<SimulationBatch> val_set;
    for (int remaining = cfg.validation_size; remaining > 0;) {
        const int b = remaining < cfg.batch_size ? remaining : cfg.batch_size;
        val_set.push_back(sample_batch(model, b, val_rng));
        remaining -= b;
    }

    std::vector<SimulationBatch> fixed;
    if (cfg.mode == TrainMode::Offline)
        for (int i = 0; i < cfg.batches_per_epoch; ++i)
            fixed.push_back(sample_batch(model, cfg.batch_size, offline_rng));

    const int total_steps = cfg.epochs * cfg.batches_per_epoch;
    auto params = am.parameters();
    AdamState adam(params);
    TrainHistory hist;
    hist.best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_params;

    auto validation_loss = [&]() {
        double acc = 0.0;
        std::size_t rows = 0;
        for (const auto& vb : val_set) {
            acc += am.loss_value(vb) * vb.params.rows();
            rows += static_cast<std::size_t>(vb.params.rows());
        }
        return acc / static_cast<double>(rows);
    };

    int global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < cfg.batches_per_epoch; ++i, ++global_step) {
            const double lr = cfg.schedule == Schedule::Cosine
                                  ? cosine_lr(global_step, total_steps, cfg.initial_lr)
                                  : cfg.initial_lr;
            try {
                SimulationBatch batch = cfg.mode == TrainMode::Online
                                            ? sample_batch(model, cfg.batch_size, train_rng)
                                            : fixed[i];
                std::vector<Tensor> grads;
                const double loss = am.loss_and_gradients(batch, grads);
                clip_global_norm(grads, 5.0);
                adam.step(params, grads, lr);
                hist.step_loss.push_back(loss);
            } catch (const SimulationError& e) {
                ++hist.skipped_batches;
                if (10 * hist.skipped_batches > total_steps)
                    throw TrainingError(std::string("more than 10% of batches failed; last: ") +
                                        e.what());
            }
        }
        const double vl = validation_loss();
        hist.val_loss.push_back(vl);
        if (vl < hist.best_val_loss) {
            hist.best_val_loss = vl;
            hist.best_epoch = epoch;
            best_params.clear();
            for (const Tensor* p : params) best_params.push_back(*p);
        }
        hist.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        if (!cfg.checkpoint_path.empty()) {
            auto state = am.state_tensors();
            state.emplace_back("meta.epoch", Tensor::scalar(static_cast<float>(epoch)));
            state.emplace_back("meta.val_loss", Tensor::scalar(static_cast<float>(vl)));
            save_checkpoint(cfg.checkpoint_path, state);
        }
    }

    if (!best_params.empty())
        for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best_params[i];
    if (!cfg.checkpoint_path.empty()) {
        auto state = am.state_tensors();
        state.emplace_back("meta.epoch", Tensor::scalar(static_cast<float>(hist.best_epoch)));
        state.emplace_back("meta.val_loss", Tensor::scalar(static_cast<float>(hist.best_val_loss)));
        save_checkpoint(cfg.checkpoint_path, state);
    }
    return hist;
}

// -- checkpoint io ------------------------------------------------------------

namespace {

void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(buf, v);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw FormatError(std::string("checkpoint truncated at offset ") +
                              std::to_string(pos) + " while reading " + what);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32(const char* what) {
        std::uint32_t v = u32(what);
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::string buf;
    buf += "BFC1";
    put_u16(buf, 1);  // version
    put_u16(buf, 0);  // flags
    put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf += name;
        put_u32(buf, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape) put_u32(buf, static_cast<std::uint32_t>(d));
        for (float v : t.data) put_f32(buf, v);
    }
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    put_u32(buf, crc);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw IoError("failed writing checkpoint: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    Reader r{buf};
    if (r.bytes(4, "magic") != "BFC1")
        throw FormatError("checkpoint magic mismatch at offset 0 in " + path);
    const std::uint16_t version = r.u16("version");
    if (version != 1)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " at offset 4");
    (void)r.u16("flags");
    if (buf.size() < r.pos + 4)
        throw FormatError("checkpoint truncated at offset " + std::to_string(r.pos));
    // trailing CRC covers everything before it
    {
        Reader tail{buf, buf.size() - 4};
        const std::uint32_t stored = tail.u32("crc32");
        const auto actual = static_cast<std::uint32_t>(crc32(
            0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
        if (stored != actual)
            throw FormatError("checkpoint CRC mismatch at offset " +
                              std::to_string(buf.size() - 4));
    }
    const std::string body = buf.substr(0, buf.size() - 4);
    Reader br{body, r.pos};
    const std::uint32_t count = br.u32("tensor count");
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = br.u32("name length");
        const std::string name = br.bytes(name_len, "name");
        const std::uint32_t rank = br.u32("rank");
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape.push_back(static_cast<int>(br.u32("dimension")));
            numel *= static_cast<std::size_t>(shape.back());
        }
        Tensor t = Tensor::zeros(shape);
        for (std::size_t j = 0; j < numel; ++j) t.data[j] = br.f32("tensor data");
        out.emplace_back(name, std::move(t));
    }
    if (br.pos != body.size())
        throw FormatError("checkpoint has " + std::to_string(body.size() - br.pos) +
                          " unexpected trailing bytes at offset " + std::to_string(br.pos));
    return out;
}

}  // namespace flowinfer
