#include "duovox/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "duovox/binio.hpp"
#include "duovox/common.hpp"

namespace duovox {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// Flat layout of one gated recurrent cell's weights for a given direction.
struct CellOffsets {
    size_t wz, wr, wh;  // H x I input weights
    size_t uz, ur, uh;  // H x H recurrent weights
    size_t bz, br, bh;  // H biases
};

struct Layout {
    int V, E, H, L;
    size_t emb;
    std::vector<std::array<CellOffsets, 2>> layers;  // [layer][direction]
    size_t head_w, head_b;
    size_t total;

    explicit Layout(const ClassifierConfig& cfg)
        : V(cfg.vocab_size), E(cfg.embedding_dim), H(cfg.hidden_dim), L(cfg.num_layers) {
        size_t off = 0;
        auto take = [&off](size_t n) {
            const size_t at = off;
            off += n;
            return at;
        };
        emb = take(static_cast<size_t>(V) * E);
        layers.resize(L);
        for (int l = 0; l < L; ++l) {
            const int in = l == 0 ? E : 2 * H;
            for (int d = 0; d < 2; ++d) {
                CellOffsets& c = layers[l][d];
                c.wz = take(static_cast<size_t>(H) * in);
                c.wr = take(static_cast<size_t>(H) * in);
                c.wh = take(static_cast<size_t>(H) * in);
                c.uz = take(static_cast<size_t>(H) * H);
                c.ur = take(static_cast<size_t>(H) * H);
                c.uh = take(static_cast<size_t>(H) * H);
                c.bz = take(H);
                c.br = take(H);
                c.bh = take(H);
            }
        }
        head_w = take(2 * static_cast<size_t>(H));
        head_b = take(1);
        total = off;
    }

    int layer_input_dim(int l) const { return l == 0 ? E : 2 * H; }
};

using CMat = Eigen::Map<const MatrixXd>;
using CVec = Eigen::Map<const VectorXd>;
using MMat = Eigen::Map<MatrixXd>;
using MVec = Eigen::Map<VectorXd>;

CMat cm(const VectorXd& p, size_t off, int rows, int cols) {
    return CMat(p.data() + off, rows, cols);
}
CVec cv(const VectorXd& p, size_t off, int n) { return CVec(p.data() + off, n); }
MMat gm(VectorXd& p, size_t off, int rows, int cols) {
    return MMat(p.data() + off, rows, cols);
}
MVec gv(VectorXd& p, size_t off, int n) { return MVec(p.data() + off, n); }

// Per-timestep activations of one direction, kept for backpropagation.
struct DirectionCache {
    MatrixXd z, r, hhat, h;  // H x T each; h column t is the state after step t
};

struct LayerCache {
    MatrixXd input;                       // T x I
    std::array<DirectionCache, 2> dirs;   // forward, backward
    MatrixXd output;                      // T x 2H
};

// Runs one direction over `input`; time order is t=0.. for d==0 and reversed
// for d==1.
void run_direction(const Layout& lay, const VectorXd& p, const CellOffsets& c,
                   const MatrixXd& input, int d, DirectionCache& out) {
    const long T = input.rows();
    const int H = lay.H;
    const int I = static_cast<int>(input.cols());
    out.z.resize(H, T);
    out.r.resize(H, T);
    out.hhat.resize(H, T);
    out.h.resize(H, T);
    const CMat wz = cm(p, c.wz, H, I), wr = cm(p, c.wr, H, I), wh = cm(p, c.wh, H, I);
    const CMat uz = cm(p, c.uz, H, H), ur = cm(p, c.ur, H, H), uh = cm(p, c.uh, H, H);
    const CVec bz = cv(p, c.bz, H), br = cv(p, c.br, H), bh = cv(p, c.bh, H);
    VectorXd h = VectorXd::Zero(H);
    for (long step = 0; step < T; ++step) {
        const long t = d == 0 ? step : T - 1 - step;
        const VectorXd x = input.row(t).transpose();
        const VectorXd z =
            (wz * x + uz * h + bz).unaryExpr([](double v) { return sigmoid(v); });
        const VectorXd r =
            (wr * x + ur * h + br).unaryExpr([](double v) { return sigmoid(v); });
        const VectorXd hhat =
            (wh * x + uh * r.cwiseProduct(h) + bh).unaryExpr([](double v) { return std::tanh(v); });
        h = (VectorXd::Ones(H) - z).cwiseProduct(h) + z.cwiseProduct(hhat);
        out.z.col(t) = z;
        out.r.col(t) = r;
        out.hhat.col(t) = hhat;
        out.h.col(t) = h;
    }
}

// Full forward for one sequence; caches everything when `caches` is given.
double forward(const ClassifierConfig& cfg, const VectorXd& p, const std::vector<int>& units,
               std::vector<LayerCache>* caches, VectorXd* pooled_out) {
    if (units.empty()) throw InputError("cannot classify an empty unit sequence");
    const Layout lay(cfg);
    for (int u : units) {
        if (u < 0 || u >= lay.V) {
            throw InputError("unit " + std::to_string(u) + " outside classifier vocabulary");
        }
    }
    const long T = static_cast<long>(units.size());
    MatrixXd x(T, lay.E);
    const CMat emb = cm(p, lay.emb, lay.V, lay.E);
    for (long t = 0; t < T; ++t) x.row(t) = emb.row(units[t]);

    if (caches) caches->assign(lay.L, LayerCache{});
    for (int l = 0; l < lay.L; ++l) {
        LayerCache local;
        LayerCache& lc = caches ? (*caches)[l] : local;
        lc.input = std::move(x);
        lc.output.resize(T, 2 * lay.H);
        for (int d = 0; d < 2; ++d) {
            run_direction(lay, p, lay.layers[l][d], lc.input, d, lc.dirs[d]);
            lc.output.middleCols(d * lay.H, lay.H) = lc.dirs[d].h.transpose();
        }
        x = lc.output;
    }
    const VectorXd pooled = x.colwise().mean().transpose();
    if (pooled_out) *pooled_out = pooled;
    return pooled.dot(cv(p, lay.head_w, 2 * lay.H)) + p(static_cast<Eigen::Index>(lay.head_b));
}

// Backward through one direction given d(loss)/d(h_t) contributions in dh_out
// (H x T); accumulates weight gradients and the input gradient.
void backward_direction(const Layout& lay, const VectorXd& p, const CellOffsets& c,
                        const MatrixXd& input, int d, const DirectionCache& fc,
                        const MatrixXd& dh_out, VectorXd& grad, MatrixXd& dinput) {
    const long T = input.rows();
    const int H = lay.H;
    const int I = static_cast<int>(input.cols());
    const CMat wz = cm(p, c.wz, H, I), wr = cm(p, c.wr, H, I), wh = cm(p, c.wh, H, I);
    const CMat uz = cm(p, c.uz, H, H), ur = cm(p, c.ur, H, H), uh = cm(p, c.uh, H, H);
    MMat dwz = gm(grad, c.wz, H, I), dwr = gm(grad, c.wr, H, I), dwh = gm(grad, c.wh, H, I);
    MMat duz = gm(grad, c.uz, H, H), dur = gm(grad, c.ur, H, H), duh = gm(grad, c.uh, H, H);
    MVec dbz = gv(grad, c.bz, H), dbr = gv(grad, c.br, H), dbh = gv(grad, c.bh, H);

    VectorXd dh_carry = VectorXd::Zero(H);
    for (long step = T - 1; step >= 0; --step) {
        const long t = d == 0 ? step : T - 1 - step;
        const long t_prev = d == 0 ? t - 1 : t + 1;
        const VectorXd hprev = (step == 0) ? VectorXd::Zero(H).eval()
                                           : fc.h.col(t_prev).eval();
        const VectorXd x = input.row(t).transpose();
        const VectorXd z = fc.z.col(t), r = fc.r.col(t), hhat = fc.hhat.col(t);

        const VectorXd dh = dh_out.col(t) + dh_carry;
        const VectorXd dahat =
            dh.cwiseProduct(z).cwiseProduct((1.0 - hhat.array().square()).matrix());
        const VectorXd daz = dh.cwiseProduct(hhat - hprev)
                                 .cwiseProduct(z.cwiseProduct((VectorXd::Ones(H) - z)));
        const VectorXd uh_dahat = uh.transpose() * dahat;
        const VectorXd dar = uh_dahat.cwiseProduct(hprev).cwiseProduct(
            r.cwiseProduct(VectorXd::Ones(H) - r));

        dwz.noalias() += daz * x.transpose();
        duz.noalias() += daz * hprev.transpose();
        dbz += daz;
        dwr.noalias() += dar * x.transpose();
        dur.noalias() += dar * hprev.transpose();
        dbr += dar;
        dwh.noalias() += dahat * x.transpose();
        duh.noalias() += dahat * r.cwiseProduct(hprev).transpose();
        dbh += dahat;

        dinput.row(t) += (wz.transpose() * daz + wr.transpose() * dar +
                          wh.transpose() * dahat)
                             .transpose();
        dh_carry = dh.cwiseProduct(VectorXd::Ones(H) - z) + uz.transpose() * daz +
                   ur.transpose() * dar + uh_dahat.cwiseProduct(r);
    }
}

}  // namespace

void ClassifierConfig::validate() const {
    if (vocab_size < 1) throw PreconditionError("classifier vocabulary is empty");
    if (num_layers < 1 || embedding_dim < 1 || hidden_dim < 1) {
        throw PreconditionError("classifier dimensions must be at least 1");
    }
    if (!(learning_rate > 0.0)) throw PreconditionError("learning rate must be positive");
    if (max_steps < 0) throw PreconditionError("negative step count");
}

ClassifierModel::ClassifierModel(const ClassifierConfig& config, uint64_t init_seed)
    : cfg_(config) {
    cfg_.validate();
    const Layout lay(cfg_);
    params_.resize(static_cast<Eigen::Index>(lay.total));
    params_.setZero();
    Rng rng(init_seed);
    auto fill_normal = [&](size_t off, size_t n, double std) {
        for (size_t i = 0; i < n; ++i) {
            params_(static_cast<Eigen::Index>(off + i)) = rng.normal(0.0, std);
        }
    };
    fill_normal(lay.emb, static_cast<size_t>(lay.V) * lay.E, 0.1);
    for (int l = 0; l < lay.L; ++l) {
        const int in = lay.layer_input_dim(l);
        const double w_std = std::sqrt(1.0 / in);
        const double u_std = std::sqrt(1.0 / lay.H);
        for (int d = 0; d < 2; ++d) {
            const CellOffsets& c = lay.layers[l][d];
            fill_normal(c.wz, static_cast<size_t>(lay.H) * in, w_std);
            fill_normal(c.wr, static_cast<size_t>(lay.H) * in, w_std);
            fill_normal(c.wh, static_cast<size_t>(lay.H) * in, w_std);
            fill_normal(c.uz, static_cast<size_t>(lay.H) * lay.H, u_std);
            fill_normal(c.ur, static_cast<size_t>(lay.H) * lay.H, u_std);
            fill_normal(c.uh, static_cast<size_t>(lay.H) * lay.H, u_std);
        }
    }
    fill_normal(lay.head_w, 2 * static_cast<size_t>(lay.H), 0.1);
}

double ClassifierModel::logit(const std::vector<int>& content_units) const {
    return forward(cfg_, params_, content_units, nullptr, nullptr);
}

double ClassifierModel::loss_and_gradient(const LabeledUnitSequence& example,
                                          Eigen::VectorXd& grad) const {
    const Layout lay(cfg_);
    if (grad.size() != static_cast<Eigen::Index>(lay.total)) {
        throw PreconditionError("gradient buffer has the wrong size");
    }
    if (example.label == IpuLabel::Undefined) {
        throw InputError("training example carries no resolved label");
    }
    std::vector<LayerCache> caches;
    VectorXd pooled;
    const double lg = forward(cfg_, params_, example.content_units, &caches, &pooled);
    const double y = example.label == IpuLabel::Listener ? 1.0 : 0.0;
    // BCE in logit form: y*softplus(-x) + (1-y)*softplus(x).
    const double loss = y * softplus(-lg) + (1.0 - y) * softplus(lg);
    const double dlogit = sigmoid(lg) - y;

    gv(grad, lay.head_w, 2 * lay.H) += dlogit * pooled;
    grad(static_cast<Eigen::Index>(lay.head_b)) += dlogit;
    const long T = static_cast<long>(example.content_units.size());
    MatrixXd dout = MatrixXd::Zero(T, 2 * lay.H);
    dout.rowwise() =
        (dlogit / static_cast<double>(T)) * cv(params_, lay.head_w, 2 * lay.H).transpose();

    for (int l = lay.L - 1; l >= 0; --l) {
        const LayerCache& lc = caches[l];
        MatrixXd dinput = MatrixXd::Zero(T, lay.layer_input_dim(l));
        for (int d = 0; d < 2; ++d) {
            const MatrixXd dh_out = dout.middleCols(d * lay.H, lay.H).transpose();
            backward_direction(lay, params_, lay.layers[l][d], lc.input, d, lc.dirs[d],
                               dh_out, grad, dinput);
        }
        dout = std::move(dinput);
    }
    MMat demb = gm(grad, lay.emb, lay.V, lay.E);
    for (long t = 0; t < T; ++t) demb.row(example.content_units[t]) += dout.row(t);
    return loss;
}

void ClassifierModel::save(const std::string& path) const {
    BinWriter w(path);
    w.magic("DVCL", 1);
    w.i32(cfg_.vocab_size);
    w.i32(cfg_.num_layers);
    w.i32(cfg_.embedding_dim);
    w.i32(cfg_.hidden_dim);
    w.f64(cfg_.learning_rate);
    w.i32(cfg_.max_steps);
    w.u64(cfg_.seed);
    w.u64(static_cast<uint64_t>(params_.size()));
    for (Eigen::Index i = 0; i < params_.size(); ++i) w.f64(params_(i));
}

ClassifierModel ClassifierModel::load(const std::string& path) {
    BinReader r(path);
    r.magic("DVCL", 1);
    ClassifierConfig cfg;
    cfg.vocab_size = r.i32();
    cfg.num_layers = r.i32();
    cfg.embedding_dim = r.i32();
    cfg.hidden_dim = r.i32();
    cfg.learning_rate = r.f64();
    cfg.max_steps = r.i32();
    cfg.seed = r.u64();
    ClassifierModel model(cfg, 0);
    const uint64_t n = r.u64();
    if (n != model.parameter_count()) {
        throw InputError("classifier checkpoint parameter count mismatch");
    }
    for (uint64_t i = 0; i < n; ++i) {
        model.params_(static_cast<Eigen::Index>(i)) = r.f64();
    }
    return model;
}

namespace {

double mean_loss(const ClassifierModel& model, const std::vector<LabeledUnitSequence>& set) {
    double total = 0.0;
    for (const auto& ex : set) {
        const double lg = model.logit(ex.content_units);
        const double y = ex.label == IpuLabel::Listener ? 1.0 : 0.0;
        total += y * softplus(-lg) + (1.0 - y) * softplus(lg);
    }
    return total / static_cast<double>(set.size());
}

}  // namespace

ClassifierTrainResult train_classifier(const std::vector<LabeledUnitSequence>& examples,
                                       const ClassifierConfig& config,
                                       const std::vector<LabeledUnitSequence>& validation) {
    config.validate();
    if (examples.empty()) throw InputError("no training examples");
    bool has_speaker = false, has_listener = false;
    for (const auto& ex : examples) {
        if (ex.content_units.empty()) throw InputError("empty training sequence");
        if (ex.label == IpuLabel::Speaker) has_speaker = true;
        else if (ex.label == IpuLabel::Listener) has_listener = true;
        else throw InputError("training example carries no resolved label");
    }
    if (!has_speaker || !has_listener) {
        throw InputError("training set must contain both speaker and listener examples");
    }

    ClassifierModel model(config, config.seed);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.parameter_count()));
    Rng rng(hash_mix(config.seed, 0x74726e));
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), size_t{0});
    rng.shuffle(order);
    size_t cursor = 0;

    ClassifierTrainResult result{model, 0.0, -1.0};
    Eigen::VectorXd best_params = model.parameters();
    double best_val = std::numeric_limits<double>::infinity();
    const int eval_every = std::max(1, config.max_steps / 20);

    for (int step = 0; step < config.max_steps; ++step) {
        if (cursor >= order.size()) {
            rng.shuffle(order);
            cursor = 0;
        }
        const auto& ex = examples[order[cursor++]];
        grad.setZero();
        const double loss = model.loss_and_gradient(ex, grad);
        if (!std::isfinite(loss)) {
            throw PreconditionError("classifier training diverged at step " +
                                    std::to_string(step));
        }
        model.parameters() -= config.learning_rate * grad;
        if (!validation.empty() &&
            (step % eval_every == eval_every - 1 || step + 1 == config.max_steps)) {
            const double val = mean_loss(model, validation);
            if (val < best_val) {
                best_val = val;
                best_params = model.parameters();
            }
        }
    }
    if (!validation.empty()) {
        model.parameters() = best_params;
        result.best_validation_loss = best_val;
    }
    result.final_loss = mean_loss(model, examples);
    result.model = std::move(model);
    return result;
}

Classification classify(const ClassifierModel& model, const std::vector<int>& content_units) {
    Classification c;
    c.probability = sigmoid(model.logit(content_units));
    c.label = c.probability > 0.5 ? IpuLabel::Listener : IpuLabel::Speaker;
    return c;
}

double evaluate_classifier(const ClassifierModel& model,
                           const std::vector<LabeledUnitSequence>& examples) {
    if (examples.empty()) throw InputError("no examples to evaluate");
    size_t correct = 0;
    for (const auto& ex : examples) {
        if (classify(model, ex.content_units).label == ex.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace duovox
