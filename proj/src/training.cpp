#include "tmc/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "tmc/errors.hpp"
#include "tmc/rng.hpp"
#include "tmc/signal_io.hpp"

namespace tmc {

double bce_loss(double y, double y_hat) {
    if (y != 0.0 && y != 1.0)
        throw ConfigError("bce_loss: label must be 0 or 1, got " + std::to_string(y));
    const double p = std::clamp(y_hat, 1e-7, 1.0 - 1e-7);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

double AdamState::lr() const {
    return cfg.lr0 * std::pow(cfg.decay_rate,
                              static_cast<double>(step / cfg.decay_interval));
}

void adam_step(std::vector<StateEntry>& params, AdamState& state) {
    std::vector<StateEntry*> trainable;
    for (auto& e : params)
        if (e.trainable) trainable.push_back(&e);
    if (state.m.empty()) {
        for (const auto* e : trainable) {
            state.m.emplace_back(e->data->size(), 0.0);
            state.v.emplace_back(e->data->size(), 0.0);
        }
    }
    if (state.m.size() != trainable.size())
        throw ConfigError("adam_step: optimizer state does not match parameter list");

    const double lr = state.lr();
    const double t = static_cast<double>(state.step + 1);
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, t);
    for (std::size_t i = 0; i < trainable.size(); ++i) {
        StateEntry& e = *trainable[i];
        const std::vector<double>& g = e.tensor.grad();
        if (g.size() != e.data->size())
            throw ConfigError("adam_step: gradient missing for " + e.name);
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (!std::isfinite(g[j]))
                throw NumericalError("adam_step: non-finite gradient in " + e.name);
            m[j] = state.cfg.beta1 * m[j] + (1.0 - state.cfg.beta1) * g[j];
            v[j] = state.cfg.beta2 * v[j] + (1.0 - state.cfg.beta2) * g[j] * g[j];
            (*e.data)[j] -=
                lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + state.cfg.eps);
        }
    }
    ++state.step;
}

void WindowDataset::append(std::vector<float> window, double label) {
    if (static_cast<std::int64_t>(window.size()) != channels * samples)
        throw ConfigError("dataset append: window size mismatch");
    windows.push_back(std::move(window));
    labels.push_back(label);
}

void WindowDataset::append_all(const WindowDataset& other) {
    if (other.channels != channels || other.samples != samples)
        throw ConfigError("dataset append: shape mismatch");
    for (std::size_t i = 0; i < other.size(); ++i) {
        windows.push_back(other.windows[i]);
        labels.push_back(other.labels[i]);
    }
}

std::pair<Tensor, std::vector<double>> WindowDataset::gather(
    const std::vector<std::size_t>& idx) const {
    const std::size_t row = static_cast<std::size_t>(channels * samples);
    std::vector<double> x(idx.size() * row);
    std::vector<double> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& w = windows.at(idx[i]);
        for (std::size_t j = 0; j < row; ++j) x[i * row + j] = w[j];
        y[i] = labels[idx[i]];
    }
    return {Tensor::from({static_cast<std::int64_t>(idx.size()), channels, samples},
                         std::move(x)),
            std::move(y)};
}

namespace {

std::vector<std::vector<double>> snapshot(const std::vector<StateEntry>& entries) {
    std::vector<std::vector<double>> out;
    for (const auto& e : entries) out.push_back(*e.data);
    return out;
}

void restore(std::vector<StateEntry>& entries, const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < entries.size(); ++i) *entries[i].data = snap[i];
}

// Mean loss and accuracy of eval-mode predictions.
std::pair<double, double> evaluate(Model& model, const WindowDataset& data,
                                   std::int64_t batch_size) {
    const auto scores = predict(model, data, batch_size);
    double loss = 0.0, correct = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        loss += bce_loss(data.labels[i], scores[i]);
        const int pred = scores[i] >= 0.5 ? 1 : 0;
        correct += (pred == static_cast<int>(data.labels[i])) ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(scores.size());
    return {loss / n, correct / n};
}

}  // namespace

std::vector<double> predict(Model& model, const WindowDataset& data,
                            std::int64_t batch_size) {
    if (batch_size <= 0) throw ConfigError("predict: nonpositive batch size");
    Rng rng(0);  // eval mode draws nothing
    std::vector<double> out;
    out.reserve(data.size());
    for (std::size_t at = 0; at < data.size(); at += static_cast<std::size_t>(batch_size)) {
        std::vector<std::size_t> idx;
        for (std::size_t i = at; i < std::min(data.size(), at + static_cast<std::size_t>(batch_size)); ++i)
            idx.push_back(i);
        auto [x, y] = data.gather(idx);
        const Tensor p = model.forward(x, Mode::Eval, rng);
        for (double v : p.values()) out.push_back(v);
    }
    return out;
}

TrainResult train(Model& model, const WindowDataset& train_data,
                  const WindowDataset& val_data, const TrainOptions& opts) {
    if (train_data.size() == 0) throw DataError("train: empty training set");
    if (val_data.size() == 0) throw DataError("train: empty validation set");
    if (opts.batch_size <= 0 ||
        static_cast<std::size_t>(opts.batch_size) > train_data.size())
        throw ConfigError("train: batch size must lie in [1, train size]");

    AdamConfig acfg;
    acfg.lr0 = opts.lr0;
    acfg.decay_rate = opts.decay_rate;
    acfg.decay_interval =
        opts.decay_interval > 0
            ? opts.decay_interval
            : (static_cast<std::int64_t>(train_data.size()) + 127) / 128;
    AdamState adam(acfg);
    auto entries = model.state();

    Rng root(opts.seed, 0x7E41);
    TrainResult res;
    std::vector<std::vector<double>> best;
    for (std::int64_t epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng erng = root.fork(static_cast<std::uint64_t>(epoch));
        std::vector<std::size_t> order(train_data.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        erng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t nbatch = 0;
        for (std::size_t at = 0; at < order.size();
             at += static_cast<std::size_t>(opts.batch_size)) {
            std::vector<std::size_t> idx(
                order.begin() + static_cast<std::ptrdiff_t>(at),
                order.begin() +
                    static_cast<std::ptrdiff_t>(
                        std::min(order.size(), at + static_cast<std::size_t>(opts.batch_size))));
            if (idx.size() < 2 && opts.batch_size > 1) continue;  // batchnorm needs >= 2
            auto [x, y] = train_data.gather(idx);
            const Tensor p = model.forward(x, Mode::Train, erng);
            const Tensor loss = bce_mean(p, y);
            if (!std::isfinite(loss.item()))
                throw NumericalError("train: loss diverged at epoch " + std::to_string(epoch));
            loss.backward();
            adam_step(entries, adam);
            for (auto& e : entries)
                if (e.trainable) e.tensor.zero_grad();
            loss_sum += loss.item();
            ++nbatch;
        }

        auto [vloss, vacc] = evaluate(model, val_data, opts.batch_size);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = adam.lr();
        rec.train_loss = nbatch ? loss_sum / static_cast<double>(nbatch) : 0.0;
        rec.val_loss = vloss;
        rec.val_acc = vacc;
        res.history.push_back(rec);

        if (res.best_epoch < 0 || vloss < res.best_val_loss) {
            res.best_epoch = epoch;
            res.best_val_loss = vloss;
            if (opts.keep_best) best = snapshot(entries);
        }
    }
    if (opts.keep_best && !best.empty()) restore(entries, best);
    return res;
}

std::string history_to_text(const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch lr train_loss val_loss val_acc\n";
    for (const auto& r : history)
        os << r.epoch << ' ' << r.lr << ' ' << r.train_loss << ' ' << r.val_loss << ' '
           << r.val_acc << '\n';
    return os.str();
}

std::pair<double, double> mean_sample_sd(const std::vector<double>& v) {
    if (v.empty()) throw ConfigError("mean_sample_sd: empty input");
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() == 1) return {m, 0.0};
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    s2 /= static_cast<double>(v.size() - 1);
    return {m, std::sqrt(s2)};
}

CvResult cross_validate(
    const std::function<std::unique_ptr<Model>(std::uint64_t seed)>& factory,
    const std::vector<WindowDataset>& folds, const TrainOptions& opts) {
    if (folds.size() < 2) throw ConfigError("cross_validate: need at least 2 folds");
    CvResult res;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        WindowDataset tr;
        tr.channels = folds[0].channels;
        tr.samples = folds[0].samples;
        for (std::size_t g = 0; g < folds.size(); ++g)
            if (g != f) tr.append_all(folds[g]);
        auto model = factory(opts.seed + f);
        TrainOptions fopts = opts;
        fopts.seed = opts.seed * 1000003 + f;
        fopts.batch_size = std::min<std::int64_t>(
            fopts.batch_size, static_cast<std::int64_t>(tr.size()));
        const TrainResult r = train(*model, tr, folds[f], fopts);
        double best_acc = 0.0;
        for (const auto& rec : r.history)
            if (rec.epoch == r.best_epoch) best_acc = rec.val_acc;
        res.fold_metric.push_back(best_acc);
    }
    std::tie(res.mean, res.stddev) = mean_sample_sd(res.fold_metric);
    return res;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

template <typename T>
void put_raw(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get_raw(const std::string& in, std::size_t& off) {
    if (off + sizeof(T) > in.size()) throw DataError("checkpoint: truncated");
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

std::string checkpoint_to_bytes(const std::vector<StateEntry>& entries) {
    std::string out = "TMCK";
    put_raw<std::uint32_t>(out, 1);  // version
    put_raw<std::uint64_t>(out, entries.size());
    for (const auto& e : entries) {
        put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) put_raw<std::int64_t>(out, d);
        for (double v : *e.data) put_raw<double>(out, v);
    }
    return out;
}

void checkpoint_from_bytes(const std::string& bytes, std::vector<StateEntry>& entries) {
    std::size_t off = 0;
    if (bytes.size() < 4 || bytes.compare(0, 4, "TMCK") != 0)
        throw DataError("checkpoint: bad magic");
    off = 4;
    const auto version = get_raw<std::uint32_t>(bytes, off);
    if (version != 1) throw DataError("checkpoint: unsupported version");
    const auto count = get_raw<std::uint64_t>(bytes, off);
    if (count != entries.size())
        throw DataError("checkpoint: entry count mismatch: file has " + std::to_string(count) +
                        ", model has " + std::to_string(entries.size()));
    for (auto& e : entries) {
        const auto nlen = get_raw<std::uint32_t>(bytes, off);
        if (off + nlen > bytes.size()) throw DataError("checkpoint: truncated");
        const std::string name = bytes.substr(off, nlen);
        off += nlen;
        if (name != e.name)
            throw DataError("checkpoint: expected entry '" + e.name + "', found '" + name + "'");
        const auto nd = get_raw<std::uint32_t>(bytes, off);
        Shape shape;
        for (std::uint32_t i = 0; i < nd; ++i) shape.push_back(get_raw<std::int64_t>(bytes, off));
        if (shape != e.shape)
            throw DataError("checkpoint: shape mismatch for '" + e.name + "'");
        for (auto& v : *e.data) v = get_raw<double>(bytes, off);
    }
}

void save_checkpoint(const std::vector<StateEntry>& entries, const std::string& path) {
    write_file(path, checkpoint_to_bytes(entries));
}

void load_checkpoint(const std::string& path, std::vector<StateEntry>& entries) {
    checkpoint_from_bytes(read_file(path), entries);
}

}  // namespace tmc
