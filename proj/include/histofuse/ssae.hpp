#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "histofuse/core.hpp"

namespace histofuse {

enum class Activation : std::uint8_t { Tanh, Linear };

struct DenseLayer {
    Matrix w;  // out x in
    Vector b;  // out
    Activation activation = Activation::Tanh;

    Eigen::Index inputs() const { return w.cols(); }
    Eigen::Index outputs() const { return w.rows(); }
};

struct LayerGrad {
    Matrix w;
    Vector b;
};

// Weights uniform in [-0.1, 0.1], biases zero.
inline DenseLayer init_layer(Eigen::Index in, Eigen::Index out, Activation act, Rng& rng) {
    DenseLayer l{Matrix(out, in), Vector::Zero(out), act};
    for (Eigen::Index c = 0; c < in; ++c) {
        for (Eigen::Index r = 0; r < out; ++r) l.w(r, c) = rng.uniform(-0.1, 0.1);
    }
    return l;
}

// Columnwise activation(W x + b).
inline Matrix encode(const DenseLayer& layer, const Matrix& x) {
    if (x.rows() != layer.inputs()) {
        throw Error("encode: layer expects " + std::to_string(layer.inputs()) + " inputs, got " + std::to_string(x.rows()));
    }
    Matrix z = layer.w * x;
    z.colwise() += layer.b;
    if (layer.activation == Activation::Tanh) z = z.array().tanh().matrix();
    return z;
}

inline Matrix softmax_columns(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const double mx = logits.col(j).maxCoeff();
        const Vector e = (logits.col(j).array() - mx).exp().matrix();
        p.col(j) = e / e.sum();
    }
    return p;
}

struct TrainConfig {
    int max_epochs = 500;
    double lr = 1e-4;
    double momentum = 0.6;
    int lr_drop_period = 5;
    double lr_drop_factor = 0.9;
    double l2_pretrain = 0.001;
    double l2_finetune = 1e-4;
    double sparsity_weight = 4.0;
    double sparsity_target = 0.15;
    int batch_size = 32;
    std::uint64_t seed = 7;
    int early_stop_patience = 20;
    double gradient_decay = 0.0;  // EMA factor on gradients; 0 disables
    int hidden1 = 500;
    int hidden2 = 300;

    void validate() const {
        if (max_epochs < 1 || lr <= 0 || momentum < 0 || momentum >= 1 || lr_drop_period < 1 || lr_drop_factor <= 0 ||
            lr_drop_factor > 1 || l2_pretrain < 0 || l2_finetune < 0 || sparsity_weight < 0 || batch_size < 1 ||
            early_stop_patience < 1 || gradient_decay < 0 || gradient_decay >= 1 || hidden1 < 1 || hidden2 < 1) {
            throw ConfigError("invalid training configuration");
        }
        if (!(sparsity_target > 0.0 && sparsity_target < 1.0)) throw ConfigError("sparsity target must lie in (0,1)");
    }

    double lr_at(int epoch) const {
        return lr * std::pow(lr_drop_factor, static_cast<double>(epoch / lr_drop_period));
    }
};

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kRhoClamp = 1e-6;

// Sparse autoencoder objective on a batch (columns of x):
// mean squared reconstruction error + L2 on both weight matrices + beta * sum KL(rho || rho_hat).
// Hidden activations are mapped from (-1,1) to (0,1) before averaging.
inline double sparse_ae_loss(const DenseLayer& enc, const DenseLayer& dec, const Matrix& x, const TrainConfig& cfg,
                             std::vector<LayerGrad>* grads = nullptr) {
    const double n = static_cast<double>(x.cols());
    const Matrix a = encode(enc, x);
    const Matrix xhat = encode(dec, a);
    const Matrix diff = xhat - x;
    const double l2 = cfg.l2_pretrain;
    const double rho = cfg.sparsity_target;

    const Vector rho_raw = ((a.array() + 1.0) * 0.5).rowwise().mean().matrix();
    Vector rho_hat = rho_raw.cwiseMax(kRhoClamp).cwiseMin(1.0 - kRhoClamp);
    double kl = 0.0;
    for (Eigen::Index j = 0; j < rho_hat.size(); ++j) {
        const double r = rho_hat(j);
        kl += rho * std::log(rho / r) + (1.0 - rho) * std::log((1.0 - rho) / (1.0 - r));
    }
    const double loss = diff.squaredNorm() / n + l2 * (enc.w.squaredNorm() + dec.w.squaredNorm()) + cfg.sparsity_weight * kl;

    if (grads) {
        grads->resize(2);
        const Matrix dxhat = (2.0 / n) * diff;  // linear decoder
        LayerGrad& gd = (*grads)[1];
        gd.w = dxhat * a.transpose() + 2.0 * l2 * dec.w;
        gd.b = dxhat.rowwise().sum();

        Matrix da = dec.w.transpose() * dxhat;
        Vector dkl(rho_hat.size());
        for (Eigen::Index j = 0; j < rho_hat.size(); ++j) {
            const bool clamped = rho_raw(j) != rho_hat(j);
            const double r = rho_hat(j);
            dkl(j) = clamped ? 0.0 : cfg.sparsity_weight * (-rho / r + (1.0 - rho) / (1.0 - r)) * (0.5 / n);
        }
        da.colwise() += dkl;
        const Matrix dz = da.cwiseProduct((1.0 - a.array().square()).matrix());
        LayerGrad& ge = (*grads)[0];
        ge.w = dz * x.transpose() + 2.0 * l2 * enc.w;
        ge.b = dz.rowwise().sum();
    }
    return loss;
}

// Mean cross-entropy of a tanh stack with a softmax head plus L2 on every
// weight matrix. `layers` ends with the (linear) head.
inline double stack_loss(const std::vector<DenseLayer>& layers, const Matrix& x, const std::vector<int>& labels,
                         double l2, std::vector<LayerGrad>* grads = nullptr, Matrix* probs_out = nullptr) {
    const double n = static_cast<double>(x.cols());
    std::vector<Matrix> acts{x};
    for (const auto& l : layers) acts.push_back(encode(l, acts.back()));
    const Matrix probs = softmax_columns(acts.back());
    double ce = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        ce -= std::log(std::max(probs(labels[static_cast<std::size_t>(j)], j), std::numeric_limits<double>::min()));
    }
    double reg = 0.0;
    for (const auto& l : layers) reg += l.w.squaredNorm();
    const double loss = ce / n + l2 * reg;

    if (grads) {
        grads->resize(layers.size());
        Matrix delta = probs;
        for (Eigen::Index j = 0; j < x.cols(); ++j) delta(labels[static_cast<std::size_t>(j)], j) -= 1.0;
        delta /= n;
        for (std::size_t li = layers.size(); li-- > 0;) {
            const DenseLayer& l = layers[li];
            if (l.activation == Activation::Tanh) delta = delta.cwiseProduct((1.0 - acts[li + 1].array().square()).matrix());
            (*grads)[li].w = delta * acts[li].transpose() + 2.0 * l2 * l.w;
            (*grads)[li].b = delta.rowwise().sum();
            if (li > 0) delta = l.w.transpose() * delta;
        }
    }
    if (probs_out) *probs_out = probs;
    return loss;
}

// ---------------------------------------------------------------------------
// Gradient checking

using LossFn = std::function<double(const std::vector<DenseLayer>&, std::vector<LayerGrad>*)>;

// max |analytic - central difference| / max(|analytic|, |cd|, 1e-12) over all parameters.
inline double gradient_check(std::vector<DenseLayer> params, const LossFn& loss, double epsilon) {
    std::vector<LayerGrad> analytic;
    loss(params, &analytic);
    double worst = 0.0;
    auto probe = [&](double& slot, double a) {
        const double saved = slot;
        slot = saved + epsilon;
        const double up = loss(params, nullptr);
        slot = saved - epsilon;
        const double down = loss(params, nullptr);
        slot = saved;
        const double cd = (up - down) / (2.0 * epsilon);
        const double denom = std::max({std::abs(a), std::abs(cd), 1e-12});
        worst = std::max(worst, std::abs(a - cd) / denom);
    };
    for (std::size_t li = 0; li < params.size(); ++li) {
        for (Eigen::Index i = 0; i < params[li].w.size(); ++i) probe(params[li].w.data()[i], analytic[li].w.data()[i]);
        for (Eigen::Index i = 0; i < params[li].b.size(); ++i) probe(params[li].b(i), analytic[li].b(i));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Optimizer

// v <- mu v - lr g ; W <- W + v. With gradient_decay > 0 the raw gradient is
// first replaced by its exponential moving average.
class MomentumSgd {
public:
    MomentumSgd(const std::vector<DenseLayer>& layers, double momentum, double gradient_decay)
        : momentum_(momentum), decay_(gradient_decay) {
        for (const auto& l : layers) {
            vel_.push_back({Matrix::Zero(l.w.rows(), l.w.cols()), Vector::Zero(l.b.size())});
            avg_.push_back({Matrix::Zero(l.w.rows(), l.w.cols()), Vector::Zero(l.b.size())});
        }
    }

    void step(std::vector<DenseLayer>& layers, const std::vector<LayerGrad>& grads, double lr) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerGrad* g = &grads[i];
            if (decay_ > 0.0) {
                avg_[i].w = decay_ * avg_[i].w + (1.0 - decay_) * grads[i].w;
                avg_[i].b = decay_ * avg_[i].b + (1.0 - decay_) * grads[i].b;
                g = &avg_[i];
            }
            vel_[i].w = momentum_ * vel_[i].w - lr * g->w;
            vel_[i].b = momentum_ * vel_[i].b - lr * g->b;
            layers[i].w += vel_[i].w;
            layers[i].b += vel_[i].b;
        }
    }

private:
    double momentum_;
    double decay_;
    std::vector<LayerGrad> vel_;
    std::vector<LayerGrad> avg_;
};

namespace detail {

inline Matrix gather_columns(const Matrix& x, const std::vector<Eigen::Index>& idx, std::size_t begin, std::size_t end) {
    Matrix out(x.rows(), static_cast<Eigen::Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i) out.col(static_cast<Eigen::Index>(i - begin)) = x.col(idx[i]);
    return out;
}

inline void check_finite(double loss, const std::string& stage, int epoch) {
    if (!std::isfinite(loss)) {
        throw NumericError(stage + ": non-finite loss at epoch " + std::to_string(epoch) +
                           " (learning rate too high?)");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Layerwise pretraining

struct PretrainEpoch {
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct SparseAe {
    DenseLayer encoder;
    DenseLayer decoder;
    std::vector<PretrainEpoch> history;
};

// x: d x n, one sample per column. Stops early when the epoch loss has not
// improved by 1e-6 (relative) for early_stop_patience epochs.
inline SparseAe train_sparse_ae(const Matrix& x, int hidden, const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(x.cols());
    if (n < static_cast<std::size_t>(cfg.batch_size)) {
        throw Error("train_sparse_ae: need at least batch_size (" + std::to_string(cfg.batch_size) + ") samples");
    }
    Rng init(derive_seed(seed, "init"));
    std::vector<DenseLayer> layers{init_layer(x.rows(), hidden, Activation::Tanh, init),
                                   init_layer(hidden, x.rows(), Activation::Linear, init)};
    Rng order_rng(derive_seed(seed, "order"));
    MomentumSgd opt(layers, cfg.momentum, cfg.gradient_decay);
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);

    SparseAe out;
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<LayerGrad> grads;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        order_rng.shuffle(order);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            const Matrix batch = detail::gather_columns(x, order, start, end);
            const double loss = sparse_ae_loss(layers[0], layers[1], batch, cfg, &grads);
            detail::check_finite(loss, "sparse autoencoder pretraining", epoch);
            opt.step(layers, grads, lr);
            total += loss;
            ++batches;
        }
        const double mean_loss = total / static_cast<double>(batches);
        out.history.push_back({epoch, mean_loss, lr});
        if (mean_loss < best * (1.0 - 1e-6) || !std::isfinite(best)) {
            best = mean_loss;
            since_best = 0;
        } else if (++since_best >= cfg.early_stop_patience) {
            break;
        }
    }
    out.encoder = std::move(layers[0]);
    out.decoder = std::move(layers[1]);
    return out;
}

// ---------------------------------------------------------------------------
// Stacked model

struct SsaeModel {
    DenseLayer enc1;
    DenseLayer enc2;
    DenseLayer head;                 // linear, followed by softmax
    std::vector<Subclass> class_order;
    Vector input_mean;               // optional standardization, empty = identity
    Vector input_scale;

    std::vector<DenseLayer> layers() const { return {enc1, enc2, head}; }
    Eigen::Index input_dim() const { return enc1.inputs(); }
    Eigen::Index classes() const { return head.outputs(); }

    Matrix standardize(const Matrix& x) const {
        if (input_mean.size() == 0) return x;
        return ((x.colwise() - input_mean).array().colwise() / input_scale.array()).matrix();
    }
};

// Column-wise softmax(W_s enc2(enc1(x)) + b_s).
inline Matrix predict_batch(const SsaeModel& model, const Matrix& x) {
    if (x.rows() != model.input_dim()) {
        throw Error("predict: model expects " + std::to_string(model.input_dim()) + " features, got " + std::to_string(x.rows()));
    }
    return softmax_columns(encode(model.head, encode(model.enc2, encode(model.enc1, model.standardize(x)))));
}

inline Vector predict(const SsaeModel& model, const Vector& x) {
    return predict_batch(model, Matrix(x)).col(0);
}

inline std::vector<int> argmax_columns(const Matrix& probs) {
    std::vector<int> out(static_cast<std::size_t>(probs.cols()));
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
        Eigen::Index best = 0;
        probs.col(j).maxCoeff(&best);
        out[static_cast<std::size_t>(j)] = static_cast<int>(best);
    }
    return out;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (truth.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) ok += pred[i] == truth[i];
    return static_cast<double>(ok) / static_cast<double>(truth.size());
}

struct HistoryRow {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;  // NaN when no validation set
    double lr = 0.0;
};

struct FineTuneResult {
    SsaeModel model;
    std::vector<HistoryRow> history;
    int best_epoch = 0;
    Warnings warnings;
};

struct LabeledSet {
    Matrix x;  // features x samples, already standardized if the model standardizes
    std::vector<int> y;
};

// End-to-end training of enc1 + enc2 + softmax head. Returns the parameters
// of the best validation epoch (training loss when there is no validation
// set).
inline FineTuneResult fine_tune(SsaeModel init, const LabeledSet& train, const LabeledSet& val, const TrainConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(train.x.cols());
    if (n == 0) throw Error("fine_tune: empty training set");
    const auto classes = static_cast<int>(init.classes());
    for (int y : train.y) {
        if (y < 0 || y >= classes) throw Error("fine_tune: label outside class order");
    }
    FineTuneResult out;
    const bool has_val = val.x.cols() > 0;
    if (!has_val) out.warnings.push_back("empty validation set; selecting the epoch with the lowest training loss");

    std::vector<DenseLayer> layers = init.layers();
    MomentumSgd opt(layers, cfg.momentum, cfg.gradient_decay);
    Rng order_rng(derive_seed(cfg.seed, "finetune-order"));
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);

    auto eval_acc = [&](const std::vector<DenseLayer>& ls, const LabeledSet& set) {
        std::vector<int> pred;
        pred.reserve(set.y.size());
        constexpr Eigen::Index chunk = 512;
        for (Eigen::Index s = 0; s < set.x.cols(); s += chunk) {
            const Eigen::Index len = std::min(chunk, set.x.cols() - s);
            Matrix h = set.x.middleCols(s, len);
            for (const auto& l : ls) h = encode(l, h);
            const auto p = argmax_columns(h);
            pred.insert(pred.end(), p.begin(), p.end());
        }
        return accuracy(pred, set.y);
    };

    std::vector<DenseLayer> best_layers = layers;
    double best_score = -std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<LayerGrad> grads;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        order_rng.shuffle(order);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            const Matrix batch = detail::gather_columns(train.x, order, start, end);
            std::vector<int> labels(end - start);
            for (std::size_t i = start; i < end; ++i) labels[i - start] = train.y[static_cast<std::size_t>(order[i])];
            const double loss = stack_loss(layers, batch, labels, cfg.l2_finetune, &grads);
            detail::check_finite(loss, "fine-tuning", epoch);
            opt.step(layers, grads, lr);
            total += loss;
            ++batches;
        }
        HistoryRow row;
        row.epoch = epoch;
        row.train_loss = total / static_cast<double>(batches);
        row.train_acc = eval_acc(layers, train);
        row.val_acc = has_val ? eval_acc(layers, val) : std::numeric_limits<double>::quiet_NaN();
        row.lr = lr;
        out.history.push_back(row);

        const double score = has_val ? row.val_acc : -row.train_loss;
        if (score > best_score) {
            best_score = score;
            best_layers = layers;
            out.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.early_stop_patience) {
            break;
        }
    }
    out.model = std::move(init);
    out.model.enc1 = best_layers[0];
    out.model.enc2 = best_layers[1];
    out.model.head = best_layers[2];
    return out;
}

struct SsaeTraining {
    FineTuneResult result;
    std::vector<PretrainEpoch> pretrain1;
    std::vector<PretrainEpoch> pretrain2;
};

// Greedy pretraining of both sparse autoencoders followed by fine-tuning.
inline SsaeTraining train_ssae(const LabeledSet& train, const LabeledSet& val, std::vector<Subclass> class_order,
                               const TrainConfig& cfg) {
    cfg.validate();
    SsaeTraining out;
    SparseAe ae1 = train_sparse_ae(train.x, cfg.hidden1, cfg, derive_seed(cfg.seed, "ae1"));
    const Matrix h1 = encode(ae1.encoder, train.x);
    SparseAe ae2 = train_sparse_ae(h1, cfg.hidden2, cfg, derive_seed(cfg.seed, "ae2"));
    out.pretrain1 = std::move(ae1.history);
    out.pretrain2 = std::move(ae2.history);

    SsaeModel init;
    init.enc1 = std::move(ae1.encoder);
    init.enc2 = std::move(ae2.encoder);
    Rng head_rng(derive_seed(cfg.seed, "head"));
    init.head = init_layer(cfg.hidden2, static_cast<Eigen::Index>(class_order.size()), Activation::Linear, head_rng);
    init.class_order = std::move(class_order);
    out.result = fine_tune(std::move(init), train, val, cfg);
    return out;
}

// Per-feature z-scoring fitted on training columns; constant features keep unit scale.
inline std::pair<Vector, Vector> fit_standardizer(const Matrix& x) {
    const Vector mean = x.rowwise().mean();
    Vector scale = ((x.colwise() - mean).array().square().rowwise().mean()).sqrt().matrix();
    for (Eigen::Index i = 0; i < scale.size(); ++i) {
        if (!(scale(i) > 1e-12)) scale(i) = 1.0;
    }
    return {mean, scale};
}

}  // namespace histofuse
