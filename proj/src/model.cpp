#include "duovox/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "duovox/binio.hpp"
#include "duovox/common.hpp"

namespace duovox {

namespace {

constexpr double kMaskValue = -1e30;  // additive logit mask; exp underflows to exactly 0
constexpr double kLnEps = 1e-5;
constexpr double kGeluK = 0.7978845608028653559;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

double gelu(double x) {
    const double u = kGeluK * (x + kGeluC * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
    const double u = kGeluK * (x + kGeluC * x * x * x);
    const double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Flat-parameter layout. Weights are stored as (out x in) matrices applied as
// X * W^T; all offsets index into one contiguous vector so the optimizer,
// serialization, and finite-difference checks can treat the model as a flat
// array.
struct Layout {
    int V = 0, D = 0, H = 0, dh = 0, F = 0, L = 0;

    struct Layer {
        size_t ln1_g, ln1_b;
        size_t wq, bq, wk, bk, wv, bv, wo, bo;
        bool cross = false;
        size_t lnq_g, lnq_b, lnkv_g, lnkv_b;
        size_t wq2, bq2, wk2, bk2, wv2, bv2, wo2, bo2;
        size_t ln2_g, ln2_b;
        size_t w1, b1, w2, b2;
    };
    size_t emb_c = 0, emb_p = 0;
    std::vector<Layer> layers;
    size_t lnf_g = 0, lnf_b = 0;
    size_t head_c = 0, head_c_b = 0, head_p = 0, head_p_b = 0;
    size_t dur_c_w = 0, dur_c_b = 0, dur_p_w = 0, dur_p_b = 0;
    size_t total = 0;

    explicit Layout(const ModelConfig& cfg) {
        V = cfg.vocab_size;
        D = cfg.embed_dim;
        H = cfg.heads;
        dh = D / H;
        F = cfg.ffn_dim;
        L = cfg.num_layers;
        size_t off = 0;
        auto take = [&off](size_t n) {
            const size_t at = off;
            off += n;
            return at;
        };
        emb_c = take(static_cast<size_t>(V) * D);
        emb_p = take(static_cast<size_t>(V) * D);
        const int first_cross = cfg.num_layers - cfg.num_cross_layers;
        layers.resize(L);
        for (int l = 0; l < L; ++l) {
            Layer& y = layers[l];
            y.ln1_g = take(D);
            y.ln1_b = take(D);
            y.wq = take(static_cast<size_t>(D) * D);
            y.bq = take(D);
            y.wk = take(static_cast<size_t>(D) * D);
            y.bk = take(D);
            y.wv = take(static_cast<size_t>(D) * D);
            y.bv = take(D);
            y.wo = take(static_cast<size_t>(D) * D);
            y.bo = take(D);
            y.cross = l >= first_cross;
            if (y.cross) {
                y.lnq_g = take(D);
                y.lnq_b = take(D);
                y.lnkv_g = take(D);
                y.lnkv_b = take(D);
                y.wq2 = take(static_cast<size_t>(D) * D);
                y.bq2 = take(D);
                y.wk2 = take(static_cast<size_t>(D) * D);
                y.bk2 = take(D);
                y.wv2 = take(static_cast<size_t>(D) * D);
                y.bv2 = take(D);
                y.wo2 = take(static_cast<size_t>(D) * D);
                y.bo2 = take(D);
            }
            y.ln2_g = take(D);
            y.ln2_b = take(D);
            y.w1 = take(static_cast<size_t>(F) * D);
            y.b1 = take(F);
            y.w2 = take(static_cast<size_t>(D) * F);
            y.b2 = take(D);
        }
        lnf_g = take(D);
        lnf_b = take(D);
        head_c = take(static_cast<size_t>(V) * D);
        head_c_b = take(V);
        head_p = take(static_cast<size_t>(V) * D);
        head_p_b = take(V);
        dur_c_w = take(D);
        dur_c_b = take(1);
        dur_p_w = take(D);
        dur_p_b = take(1);
        total = off;
    }
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

MatrixXd positional_encoding(long t0, long count, int dim) {
    MatrixXd pe(count, dim);
    for (long t = 0; t < count; ++t) {
        for (int i = 0; i < dim; i += 2) {
            const double angle = static_cast<double>(t0 + t) /
                                 std::pow(10000.0, static_cast<double>(i) / dim);
            pe(t, i) = std::sin(angle);
            if (i + 1 < dim) pe(t, i + 1) = std::cos(angle);
        }
    }
    return pe;
}

// Row-wise layer norm. Caches mean and reciprocal sigma per row.
void layer_norm(const MatrixXd& x, CVec g, CVec b, MatrixXd& y, VectorXd& mu, VectorXd& rsig) {
    const long T = x.rows();
    const int D = static_cast<int>(x.cols());
    y.resize(T, D);
    mu.resize(T);
    rsig.resize(T);
    for (long t = 0; t < T; ++t) {
        const double m = x.row(t).mean();
        const double var = (x.row(t).array() - m).square().mean();
        const double r = 1.0 / std::sqrt(var + kLnEps);
        mu(t) = m;
        rsig(t) = r;
        y.row(t) = (((x.row(t).array() - m) * r) * g.transpose().array()).matrix() +
                   b.transpose();
    }
}

// Backward of layer_norm; accumulates into dg/db and returns dx.
MatrixXd layer_norm_backward(const MatrixXd& dy, const MatrixXd& x, const VectorXd& mu,
                             const VectorXd& rsig, CVec g, MVec dg, MVec db) {
    const long T = x.rows();
    const int D = static_cast<int>(x.cols());
    MatrixXd dx(T, D);
    for (long t = 0; t < T; ++t) {
        const Eigen::ArrayXd xh = (x.row(t).transpose().array() - mu(t)) * rsig(t);
        const Eigen::ArrayXd dyr = dy.row(t).transpose().array();
        dg += (dyr * xh).matrix();
        db += dy.row(t).transpose();
        const Eigen::ArrayXd dxh = dyr * g.array();
        const double m1 = dxh.mean();
        const double m2 = (dxh * xh).mean();
        dx.row(t) = (rsig(t) * (dxh - m1 - xh * m2)).matrix().transpose();
    }
    return dx;
}

template <typename Row>
void softmax_row_inplace(Row&& row) {
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
}

// Per-head causal attention probabilities: P = softmax(Q K^T / sqrt(dh)),
// entries with key index > query index masked away.
template <typename QBlock, typename KBlock>
MatrixXd causal_attention(const QBlock& q, const KBlock& k, int dh) {
    MatrixXd s = q * k.transpose() / std::sqrt(static_cast<double>(dh));
    const long T = s.rows();
    for (long i = 0; i < T; ++i) {
        for (long j = i + 1; j < s.cols(); ++j) s(i, j) = kMaskValue;
        softmax_row_inplace(s.row(i));
    }
    return s;
}

// dS for row-wise softmax: p .* (dp - sum(dp .* p)).
MatrixXd softmax_backward(const MatrixXd& p, const MatrixXd& dp) {
    MatrixXd ds(p.rows(), p.cols());
    for (long i = 0; i < p.rows(); ++i) {
        const double dot = p.row(i).dot(dp.row(i));
        ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
    }
    return ds;
}

struct LayerCache {
    MatrixXd x;                    // layer input
    MatrixXd a;                    // LN1(x)
    VectorXd ln1_mu, ln1_rsig;
    MatrixXd q, k, v;              // self-attention projections
    std::vector<MatrixXd> p;       // per-head attention
    MatrixXd z;                    // attention output (pre-projection)
    MatrixXd s;                    // after self-attention residual
    MatrixXd qx;                   // LNq(s)
    VectorXd lnq_mu, lnq_rsig;
    MatrixXd kvsrc;                // LNkv(x): cross K/V source for the other tower
    VectorXd lnkv_mu, lnkv_rsig;
    MatrixXd q2, k2, v2;
    std::vector<MatrixXd> p2;      // this tower's cross attention over the other's k2/v2
    MatrixXd z2;
    MatrixXd c;                    // after cross residual
    MatrixXd f;                    // LN2(c)
    VectorXd ln2_mu, ln2_rsig;
    MatrixXd g_pre, g;             // FFN hidden
};

struct ChannelCache {
    std::vector<LayerCache> layers;
    MatrixXd x_final;
    MatrixXd y;                    // final layer norm output
    VectorXd lnf_mu, lnf_rsig;
    VectorXd durpre_c, durpre_p;
    StreamLogits out;
};

RowVectorXd stream_mask(const ModelConfig& cfg, bool pitch) {
    RowVectorXd mask = RowVectorXd::Constant(cfg.vocab_size, kMaskValue);
    const int units = pitch ? cfg.n_pitch : cfg.n_units;
    for (int u = 0; u < units; ++u) mask(u) = 0.0;
    mask(cfg.pad_id) = 0.0;
    mask(cfg.eos_id) = 0.0;
    return mask;
}

void check_tokens(const std::vector<int>& tokens, int vocab) {
    for (int t : tokens) {
        if (t < 0 || t >= vocab) {
            throw InputError("token " + std::to_string(t) + " outside vocabulary of size " +
                             std::to_string(vocab));
        }
    }
}

}  // namespace

ModelConfig ModelConfig::desk_scale(const Vocabulary& vocab) {
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.n_units = vocab.n_content_units();
    cfg.n_pitch = vocab.n_pitch_bins();
    cfg.pad_id = vocab.pad();
    cfg.eos_id = vocab.eos();
    cfg.num_layers = 2;
    cfg.num_cross_layers = 1;
    cfg.heads = 4;
    cfg.embed_dim = 64;
    cfg.ffn_dim = 256;
    cfg.context_frames = 50;
    cfg.max_generation_frames = 1500;
    return cfg;
}

ModelConfig ModelConfig::paper_scale(const Vocabulary& vocab) {
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.n_units = vocab.n_content_units();
    cfg.n_pitch = vocab.n_pitch_bins();
    cfg.pad_id = vocab.pad();
    cfg.eos_id = vocab.eos();
    cfg.num_layers = 6;
    cfg.num_cross_layers = 4;
    cfg.heads = 8;
    cfg.embed_dim = 512;
    cfg.ffn_dim = 2048;
    cfg.context_frames = 500;
    cfg.max_generation_frames = 6000;
    return cfg;
}

void ModelConfig::validate() const {
    if (vocab_size < 1) throw PreconditionError("model vocabulary is empty");
    if (n_units < 1 || n_units > vocab_size) throw PreconditionError("bad content unit count");
    if (n_pitch < 1 || n_pitch > n_units) throw PreconditionError("bad pitch bin count");
    if (pad_id < 0 || pad_id >= vocab_size || eos_id < 0 || eos_id >= vocab_size) {
        throw PreconditionError("PAD/EOS ids outside the vocabulary");
    }
    if (num_layers < 1) throw PreconditionError("need at least one layer");
    if (num_cross_layers < 0 || num_cross_layers > num_layers) {
        throw PreconditionError("cross-attention layer count exceeds layer count");
    }
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
        throw PreconditionError("embedding dimension must be a positive multiple of heads");
    }
    if (ffn_dim < 1) throw PreconditionError("feed-forward dimension must be positive");
    if (!(nucleus_p > 0.0 && nucleus_p <= 1.0)) {
        throw PreconditionError("nucleus_p must lie in (0, 1]");
    }
    if (context_frames < 0 || max_duration < 1 || max_generation_frames < 1) {
        throw PreconditionError("bad generation limits");
    }
}

MsDlm::MsDlm(const ModelConfig& config, uint64_t init_seed) : cfg_(config) {
    cfg_.validate();
    const Layout lay(cfg_);
    params_.resize(static_cast<Eigen::Index>(lay.total));
    params_.setZero();
    Rng rng(init_seed);
    auto fill_normal = [&](size_t off, size_t n, double std) {
        for (size_t i = 0; i < n; ++i) params_(static_cast<Eigen::Index>(off + i)) = rng.normal(0.0, std);
    };
    auto fill_ones = [&](size_t off, size_t n) {
        for (size_t i = 0; i < n; ++i) params_(static_cast<Eigen::Index>(off + i)) = 1.0;
    };
    const size_t D = lay.D, V = lay.V, F = lay.F;
    const double attn_std = std::sqrt(1.0 / lay.D);
    fill_normal(lay.emb_c, V * D, 0.02);
    fill_normal(lay.emb_p, V * D, 0.02);
    for (const auto& l : lay.layers) {
        fill_ones(l.ln1_g, D);
        fill_normal(l.wq, D * D, attn_std);
        fill_normal(l.wk, D * D, attn_std);
        fill_normal(l.wv, D * D, attn_std);
        fill_normal(l.wo, D * D, attn_std);
        if (l.cross) {
            fill_ones(l.lnq_g, D);
            fill_ones(l.lnkv_g, D);
            fill_normal(l.wq2, D * D, attn_std);
            fill_normal(l.wk2, D * D, attn_std);
            fill_normal(l.wv2, D * D, attn_std);
            // wo2 stays zero so cross-attention starts as a no-op. Single-channel
            // training never touches these blocks; a warm-started two-channel run
            // must begin from the single-channel model's behaviour, not from
            // random cross-tower projections injected into every residual stream.
        }
        fill_ones(l.ln2_g, D);
        fill_normal(l.w1, F * D, std::sqrt(2.0 / (D + F)));
        fill_normal(l.w2, D * F, std::sqrt(2.0 / (D + F)));
    }
    fill_ones(lay.lnf_g, D);
    fill_normal(lay.head_c, V * D, 0.02);
    fill_normal(lay.head_p, V * D, 0.02);
    fill_normal(lay.dur_c_w, D, 0.02);
    fill_normal(lay.dur_p_w, D, 0.02);
}

namespace {

// Full teacher-forced forward for one example; fills caches for backward.
void forward_cached(const ModelConfig& cfg, const VectorXd& params, const TrainingExample& ex,
                    std::vector<ChannelCache>& channels) {
    const Layout lay(cfg);
    const int n_ch = ex.single_channel ? 1 : 2;
    const long T = static_cast<long>(ex.channels[0].input_content.size());
    if (T == 0) throw InputError("example with empty input streams");
    for (int c = 0; c < n_ch; ++c) {
        const auto& chan = ex.channels[c];
        if (static_cast<long>(chan.input_content.size()) != T ||
            static_cast<long>(chan.input_pitch.size()) != T) {
            throw InputError("channel streams disagree in length");
        }
        check_tokens(chan.input_content, cfg.vocab_size);
        check_tokens(chan.input_pitch, cfg.vocab_size);
    }

    channels.assign(n_ch, ChannelCache{});
    const MatrixXd pe = positional_encoding(0, T, lay.D);
    const CMat emb_c = cm(params, lay.emb_c, lay.V, lay.D);
    const CMat emb_p = cm(params, lay.emb_p, lay.V, lay.D);

    std::vector<MatrixXd> x(n_ch);
    for (int c = 0; c < n_ch; ++c) {
        x[c].resize(T, lay.D);
        for (long t = 0; t < T; ++t) {
            x[c].row(t) = emb_c.row(ex.channels[c].input_content[t]) +
                          emb_p.row(ex.channels[c].input_pitch[t]) + pe.row(t);
        }
        channels[c].layers.resize(lay.L);
    }

    for (int l = 0; l < lay.L; ++l) {
        const auto& ly = lay.layers[l];
        const bool do_cross = ly.cross && n_ch == 2;
        // Self-attention (and the cross K/V source) per tower.
        for (int c = 0; c < n_ch; ++c) {
            LayerCache& lc = channels[c].layers[l];
            lc.x = x[c];
            layer_norm(lc.x, cv(params, ly.ln1_g, lay.D), cv(params, ly.ln1_b, lay.D), lc.a,
                       lc.ln1_mu, lc.ln1_rsig);
            lc.q.noalias() = lc.a * cm(params, ly.wq, lay.D, lay.D).transpose();
            lc.q.rowwise() += cv(params, ly.bq, lay.D).transpose();
            lc.k.noalias() = lc.a * cm(params, ly.wk, lay.D, lay.D).transpose();
            lc.k.rowwise() += cv(params, ly.bk, lay.D).transpose();
            lc.v.noalias() = lc.a * cm(params, ly.wv, lay.D, lay.D).transpose();
            lc.v.rowwise() += cv(params, ly.bv, lay.D).transpose();
            lc.p.resize(lay.H);
            lc.z.resize(T, lay.D);
            for (int h = 0; h < lay.H; ++h) {
                lc.p[h] = causal_attention(lc.q.block(0, h * lay.dh, T, lay.dh),
                                           lc.k.block(0, h * lay.dh, T, lay.dh), lay.dh);
                lc.z.block(0, h * lay.dh, T, lay.dh).noalias() =
                    lc.p[h] * lc.v.block(0, h * lay.dh, T, lay.dh);
            }
            lc.s.noalias() = lc.z * cm(params, ly.wo, lay.D, lay.D).transpose();
            lc.s.rowwise() += cv(params, ly.bo, lay.D).transpose();
            lc.s += lc.x;
            if (do_cross) {
                layer_norm(lc.x, cv(params, ly.lnkv_g, lay.D), cv(params, ly.lnkv_b, lay.D),
                           lc.kvsrc, lc.lnkv_mu, lc.lnkv_rsig);
                lc.k2.noalias() = lc.kvsrc * cm(params, ly.wk2, lay.D, lay.D).transpose();
                lc.k2.rowwise() += cv(params, ly.bk2, lay.D).transpose();
                lc.v2.noalias() = lc.kvsrc * cm(params, ly.wv2, lay.D, lay.D).transpose();
                lc.v2.rowwise() += cv(params, ly.bv2, lay.D).transpose();
            }
        }
        // Cross-attention and feed-forward.
        for (int c = 0; c < n_ch; ++c) {
            LayerCache& lc = channels[c].layers[l];
            if (do_cross) {
                const LayerCache& other = channels[1 - c].layers[l];
                layer_norm(lc.s, cv(params, ly.lnq_g, lay.D), cv(params, ly.lnq_b, lay.D),
                           lc.qx, lc.lnq_mu, lc.lnq_rsig);
                lc.q2.noalias() = lc.qx * cm(params, ly.wq2, lay.D, lay.D).transpose();
                lc.q2.rowwise() += cv(params, ly.bq2, lay.D).transpose();
                lc.p2.resize(lay.H);
                lc.z2.resize(T, lay.D);
                for (int h = 0; h < lay.H; ++h) {
                    lc.p2[h] = causal_attention(lc.q2.block(0, h * lay.dh, T, lay.dh),
                                                other.k2.block(0, h * lay.dh, T, lay.dh),
                                                lay.dh);
                    lc.z2.block(0, h * lay.dh, T, lay.dh).noalias() =
                        lc.p2[h] * other.v2.block(0, h * lay.dh, T, lay.dh);
                }
                lc.c.noalias() = lc.z2 * cm(params, ly.wo2, lay.D, lay.D).transpose();
                lc.c.rowwise() += cv(params, ly.bo2, lay.D).transpose();
                lc.c += lc.s;
            } else {
                lc.c = lc.s;
            }
            layer_norm(lc.c, cv(params, ly.ln2_g, lay.D), cv(params, ly.ln2_b, lay.D), lc.f,
                       lc.ln2_mu, lc.ln2_rsig);
            lc.g_pre.noalias() = lc.f * cm(params, ly.w1, lay.F, lay.D).transpose();
            lc.g_pre.rowwise() += cv(params, ly.b1, lay.F).transpose();
            lc.g = lc.g_pre.unaryExpr([](double v) { return gelu(v); });
            x[c].noalias() = lc.g * cm(params, ly.w2, lay.D, lay.F).transpose();
            x[c].rowwise() += cv(params, ly.b2, lay.D).transpose();
            x[c] += lc.c;
        }
    }

    const RowVectorXd mask_c = stream_mask(cfg, false);
    const RowVectorXd mask_p = stream_mask(cfg, true);
    for (int c = 0; c < n_ch; ++c) {
        ChannelCache& cc = channels[c];
        cc.x_final = x[c];
        layer_norm(cc.x_final, cv(params, lay.lnf_g, lay.D), cv(params, lay.lnf_b, lay.D),
                   cc.y, cc.lnf_mu, cc.lnf_rsig);
        cc.out.content_logits.noalias() = cc.y * cm(params, lay.head_c, lay.V, lay.D).transpose();
        cc.out.content_logits.rowwise() +=
            cv(params, lay.head_c_b, lay.V).transpose() + mask_c;
        cc.out.pitch_logits.noalias() = cc.y * cm(params, lay.head_p, lay.V, lay.D).transpose();
        cc.out.pitch_logits.rowwise() += cv(params, lay.head_p_b, lay.V).transpose() + mask_p;
        cc.durpre_c = cc.y * cv(params, lay.dur_c_w, lay.D);
        cc.durpre_c.array() += params(static_cast<Eigen::Index>(lay.dur_c_b));
        cc.durpre_p = cc.y * cv(params, lay.dur_p_w, lay.D);
        cc.durpre_p.array() += params(static_cast<Eigen::Index>(lay.dur_p_b));
        cc.out.content_dur = cc.durpre_c.unaryExpr([](double v) { return softplus(v); });
        cc.out.pitch_dur = cc.durpre_p.unaryExpr([](double v) { return softplus(v); });
    }
}

double nll_of_row(const Eigen::RowVectorXd& logits, int target) {
    const double mx = logits.maxCoeff();
    const double lse = std::log((logits.array() - mx).exp().sum()) + mx;
    return lse - logits(target);
}

// Loss over the edge positions of one stream; optionally accumulates
// d(loss)/d(logits) and d(loss)/d(dur_pre).
void stream_loss(const MatrixXd& logits, const VectorXd& dur, const VectorXd& dur_pre,
                 const std::vector<int>& targets, const std::vector<uint8_t>& edges,
                 const std::vector<int>& durations, LossBreakdown& sum, MatrixXd* dlogits,
                 VectorXd* ddurpre) {
    const long T = logits.rows();
    if (static_cast<long>(targets.size()) != T || static_cast<long>(edges.size()) != T ||
        static_cast<long>(durations.size()) != T) {
        throw InputError("target/edge/duration arrays disagree with the input length");
    }
    for (long t = 0; t < T; ++t) {
        if (!edges[t]) continue;
        const int target = targets[t];
        if (logits(t, target) <= kMaskValue / 2) {
            throw PreconditionError("edge target token is masked out of this stream's output");
        }
        sum.unit_nll += nll_of_row(logits.row(t), target);
        const double diff = dur(t) - static_cast<double>(durations[t]);
        sum.duration_l1 += std::fabs(diff);
        ++sum.edges;
        if (dlogits) {
            Eigen::RowVectorXd p = logits.row(t);
            softmax_row_inplace(p);
            p(target) -= 1.0;
            dlogits->row(t) += p;
        }
        if (ddurpre) {
            const double dsign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            (*ddurpre)(t) += dsign * sigmoid(dur_pre(t));
        }
    }
}

}  // namespace

std::array<StreamLogits, 2> MsDlm::forward(const TrainingExample& example) const {
    std::vector<ChannelCache> channels;
    forward_cached(cfg_, params_, example, channels);
    std::array<StreamLogits, 2> out;
    for (size_t c = 0; c < channels.size(); ++c) out[c] = std::move(channels[c].out);
    return out;
}

LossBreakdown MsDlm::loss(const TrainingExample& example) const {
    std::vector<ChannelCache> channels;
    forward_cached(cfg_, params_, example, channels);
    LossBreakdown sum;
    for (size_t c = 0; c < channels.size(); ++c) {
        const auto& chan = example.channels[c];
        const auto& cc = channels[c];
        stream_loss(cc.out.content_logits, cc.out.content_dur, cc.durpre_c,
                    chan.target_content, chan.edge_content, chan.dur_content, sum, nullptr,
                    nullptr);
        stream_loss(cc.out.pitch_logits, cc.out.pitch_dur, cc.durpre_p, chan.target_pitch,
                    chan.edge_pitch, chan.dur_pitch, sum, nullptr, nullptr);
    }
    if (sum.edges == 0) log_warn("example contains no edge positions; loss is zero");
    sum.total = sum.unit_nll + sum.duration_l1;
    return sum;
}

LossBreakdown MsDlm::loss_and_gradient(const TrainingExample& example,
                                       Eigen::VectorXd& grad) const {
    const Layout lay(cfg_);
    if (grad.size() != static_cast<Eigen::Index>(lay.total)) {
        throw PreconditionError("gradient buffer has the wrong size");
    }
    std::vector<ChannelCache> channels;
    forward_cached(cfg_, params_, example, channels);
    const int n_ch = static_cast<int>(channels.size());
    const long T = channels[0].y.rows();

    LossBreakdown sum;
    std::vector<MatrixXd> dlog_c(n_ch), dlog_p(n_ch);
    std::vector<VectorXd> ddpre_c(n_ch), ddpre_p(n_ch);
    for (int c = 0; c < n_ch; ++c) {
        dlog_c[c] = MatrixXd::Zero(T, lay.V);
        dlog_p[c] = MatrixXd::Zero(T, lay.V);
        ddpre_c[c] = VectorXd::Zero(T);
        ddpre_p[c] = VectorXd::Zero(T);
        const auto& chan = example.channels[c];
        const auto& cc = channels[c];
        stream_loss(cc.out.content_logits, cc.out.content_dur, cc.durpre_c,
                    chan.target_content, chan.edge_content, chan.dur_content, sum, &dlog_c[c],
                    &ddpre_c[c]);
        stream_loss(cc.out.pitch_logits, cc.out.pitch_dur, cc.durpre_p, chan.target_pitch,
                    chan.edge_pitch, chan.dur_pitch, sum, &dlog_p[c], &ddpre_p[c]);
    }
    if (sum.edges == 0) log_warn("example contains no edge positions; loss is zero");
    sum.total = sum.unit_nll + sum.duration_l1;

    // Head and final-norm backward.
    std::vector<MatrixXd> dx(n_ch);
    for (int c = 0; c < n_ch; ++c) {
        const ChannelCache& cc = channels[c];
        MatrixXd dy = dlog_c[c] * cm(params_, lay.head_c, lay.V, lay.D);
        dy.noalias() += dlog_p[c] * cm(params_, lay.head_p, lay.V, lay.D);
        dy.noalias() += ddpre_c[c] * cv(params_, lay.dur_c_w, lay.D).transpose();
        dy.noalias() += ddpre_p[c] * cv(params_, lay.dur_p_w, lay.D).transpose();
        gm(grad, lay.head_c, lay.V, lay.D).noalias() += dlog_c[c].transpose() * cc.y;
        gv(grad, lay.head_c_b, lay.V) += dlog_c[c].colwise().sum().transpose();
        gm(grad, lay.head_p, lay.V, lay.D).noalias() += dlog_p[c].transpose() * cc.y;
        gv(grad, lay.head_p_b, lay.V) += dlog_p[c].colwise().sum().transpose();
        gv(grad, lay.dur_c_w, lay.D).noalias() += cc.y.transpose() * ddpre_c[c];
        grad(static_cast<Eigen::Index>(lay.dur_c_b)) += ddpre_c[c].sum();
        gv(grad, lay.dur_p_w, lay.D).noalias() += cc.y.transpose() * ddpre_p[c];
        grad(static_cast<Eigen::Index>(lay.dur_p_b)) += ddpre_p[c].sum();
        dx[c] = layer_norm_backward(dy, cc.x_final, cc.lnf_mu, cc.lnf_rsig,
                                    cv(params_, lay.lnf_g, lay.D), gv(grad, lay.lnf_g, lay.D),
                                    gv(grad, lay.lnf_b, lay.D));
    }

    // Layers in reverse; cross-attention couples the towers, so gradients to
    // a layer's input accumulate from both channels before the next layer.
    for (int l = lay.L - 1; l >= 0; --l) {
        const auto& ly = lay.layers[l];
        const bool do_cross = ly.cross && n_ch == 2;
        std::vector<MatrixXd> dxl(n_ch, MatrixXd::Zero(T, lay.D));
        std::vector<MatrixXd> ds(n_ch);
        for (int c = 0; c < n_ch; ++c) {
            LayerCache& lc = channels[c].layers[l];
            // FFN backward: x_next = c + gelu(LN2(c) W1^T + b1) W2^T + b2.
            MatrixXd dc = dx[c];
            MatrixXd dg = dx[c] * cm(params_, ly.w2, lay.D, lay.F);
            gm(grad, ly.w2, lay.D, lay.F).noalias() += dx[c].transpose() * lc.g;
            gv(grad, ly.b2, lay.D) += dx[c].colwise().sum().transpose();
            MatrixXd dgpre =
                dg.cwiseProduct(lc.g_pre.unaryExpr([](double v) { return gelu_grad(v); }));
            MatrixXd df = dgpre * cm(params_, ly.w1, lay.F, lay.D);
            gm(grad, ly.w1, lay.F, lay.D).noalias() += dgpre.transpose() * lc.f;
            gv(grad, ly.b1, lay.F) += dgpre.colwise().sum().transpose();
            dc += layer_norm_backward(df, lc.c, lc.ln2_mu, lc.ln2_rsig,
                                      cv(params_, ly.ln2_g, lay.D), gv(grad, ly.ln2_g, lay.D),
                                      gv(grad, ly.ln2_b, lay.D));

            if (do_cross) {
                LayerCache& other = channels[1 - c].layers[l];
                // c = s + z2 Wo2^T + bo2.
                ds[c] = dc;
                MatrixXd dz2 = dc * cm(params_, ly.wo2, lay.D, lay.D);
                gm(grad, ly.wo2, lay.D, lay.D).noalias() += dc.transpose() * lc.z2;
                gv(grad, ly.bo2, lay.D) += dc.colwise().sum().transpose();
                MatrixXd dq2 = MatrixXd::Zero(T, lay.D);
                MatrixXd dk2 = MatrixXd::Zero(T, lay.D);
                MatrixXd dv2 = MatrixXd::Zero(T, lay.D);
                const double inv = 1.0 / std::sqrt(static_cast<double>(lay.dh));
                for (int h = 0; h < lay.H; ++h) {
                    const auto q2h = lc.q2.block(0, h * lay.dh, T, lay.dh);
                    const auto k2h = other.k2.block(0, h * lay.dh, T, lay.dh);
                    const auto v2h = other.v2.block(0, h * lay.dh, T, lay.dh);
                    const auto dz2h = dz2.block(0, h * lay.dh, T, lay.dh);
                    dv2.block(0, h * lay.dh, T, lay.dh).noalias() +=
                        lc.p2[h].transpose() * dz2h;
                    MatrixXd dp = dz2h * v2h.transpose();
                    MatrixXd dsc = softmax_backward(lc.p2[h], dp) * inv;
                    dq2.block(0, h * lay.dh, T, lay.dh).noalias() += dsc * k2h;
                    dk2.block(0, h * lay.dh, T, lay.dh).noalias() += dsc.transpose() * q2h;
                }
                MatrixXd dqx = dq2 * cm(params_, ly.wq2, lay.D, lay.D);
                gm(grad, ly.wq2, lay.D, lay.D).noalias() += dq2.transpose() * lc.qx;
                gv(grad, ly.bq2, lay.D) += dq2.colwise().sum().transpose();
                ds[c] += layer_norm_backward(dqx, lc.s, lc.lnq_mu, lc.lnq_rsig,
                                             cv(params_, ly.lnq_g, lay.D),
                                             gv(grad, ly.lnq_g, lay.D),
                                             gv(grad, ly.lnq_b, lay.D));
                // K/V source lives on the other tower's layer input.
                MatrixXd dkvsrc = dk2 * cm(params_, ly.wk2, lay.D, lay.D);
                gm(grad, ly.wk2, lay.D, lay.D).noalias() += dk2.transpose() * other.kvsrc;
                gv(grad, ly.bk2, lay.D) += dk2.colwise().sum().transpose();
                dkvsrc.noalias() += dv2 * cm(params_, ly.wv2, lay.D, lay.D);
                gm(grad, ly.wv2, lay.D, lay.D).noalias() += dv2.transpose() * other.kvsrc;
                gv(grad, ly.bv2, lay.D) += dv2.colwise().sum().transpose();
                dxl[1 - c] += layer_norm_backward(dkvsrc, other.x, other.lnkv_mu,
                                                  other.lnkv_rsig,
                                                  cv(params_, ly.lnkv_g, lay.D),
                                                  gv(grad, ly.lnkv_g, lay.D),
                                                  gv(grad, ly.lnkv_b, lay.D));
            } else {
                ds[c] = dc;
            }
        }
        for (int c = 0; c < n_ch; ++c) {
            LayerCache& lc = channels[c].layers[l];
            // s = x + z Wo^T + bo.
            dxl[c] += ds[c];
            MatrixXd dz = ds[c] * cm(params_, ly.wo, lay.D, lay.D);
            gm(grad, ly.wo, lay.D, lay.D).noalias() += ds[c].transpose() * lc.z;
            gv(grad, ly.bo, lay.D) += ds[c].colwise().sum().transpose();
            MatrixXd dq = MatrixXd::Zero(T, lay.D);
            MatrixXd dk = MatrixXd::Zero(T, lay.D);
            MatrixXd dv = MatrixXd::Zero(T, lay.D);
            const double inv = 1.0 / std::sqrt(static_cast<double>(lay.dh));
            for (int h = 0; h < lay.H; ++h) {
                const auto qh = lc.q.block(0, h * lay.dh, T, lay.dh);
                const auto kh = lc.k.block(0, h * lay.dh, T, lay.dh);
                const auto vh = lc.v.block(0, h * lay.dh, T, lay.dh);
                const auto dzh = dz.block(0, h * lay.dh, T, lay.dh);
                dv.block(0, h * lay.dh, T, lay.dh).noalias() += lc.p[h].transpose() * dzh;
                MatrixXd dp = dzh * vh.transpose();
                MatrixXd dsc = softmax_backward(lc.p[h], dp) * inv;
                dq.block(0, h * lay.dh, T, lay.dh).noalias() += dsc * kh;
                dk.block(0, h * lay.dh, T, lay.dh).noalias() += dsc.transpose() * qh;
            }
            MatrixXd da = dq * cm(params_, ly.wq, lay.D, lay.D);
            gm(grad, ly.wq, lay.D, lay.D).noalias() += dq.transpose() * lc.a;
            gv(grad, ly.bq, lay.D) += dq.colwise().sum().transpose();
            da.noalias() += dk * cm(params_, ly.wk, lay.D, lay.D);
            gm(grad, ly.wk, lay.D, lay.D).noalias() += dk.transpose() * lc.a;
            gv(grad, ly.bk, lay.D) += dk.colwise().sum().transpose();
            da.noalias() += dv * cm(params_, ly.wv, lay.D, lay.D);
            gm(grad, ly.wv, lay.D, lay.D).noalias() += dv.transpose() * lc.a;
            gv(grad, ly.bv, lay.D) += dv.colwise().sum().transpose();
            dxl[c] += layer_norm_backward(da, lc.x, lc.ln1_mu, lc.ln1_rsig,
                                          cv(params_, ly.ln1_g, lay.D),
                                          gv(grad, ly.ln1_g, lay.D),
                                          gv(grad, ly.ln1_b, lay.D));
        }
        dx = std::move(dxl);
    }

    // Embedding scatter.
    for (int c = 0; c < n_ch; ++c) {
        MMat demb_c = gm(grad, lay.emb_c, lay.V, lay.D);
        MMat demb_p = gm(grad, lay.emb_p, lay.V, lay.D);
        const auto& chan = example.channels[c];
        for (long t = 0; t < T; ++t) {
            demb_c.row(chan.input_content[t]) += dx[c].row(t);
            demb_p.row(chan.input_pitch[t]) += dx[c].row(t);
        }
    }
    return sum;
}

// ---------------------------------------------------------------------------
// Incremental decoding

namespace {

struct DecodeChannel {
    std::vector<MatrixXd> k, v;    // self-attention caches per layer
    std::vector<MatrixXd> k2, v2;  // cross K/V source per layer (this tower's)
};

// Stepwise evaluator sharing parameters with the batch path. Positions are
// fed one at a time for both towers in lockstep.
class Decoder {
  public:
    Decoder(const ModelConfig& cfg, const VectorXd& params, int n_channels, long capacity)
        : cfg_(cfg),
          lay_(cfg),
          params_(params),
          n_ch_(n_channels),
          mask_c_(stream_mask(cfg, false)),
          mask_p_(stream_mask(cfg, true)) {
        for (int c = 0; c < n_ch_; ++c) {
            ch_[c].k.assign(lay_.L, MatrixXd(capacity, lay_.D));
            ch_[c].v.assign(lay_.L, MatrixXd(capacity, lay_.D));
            ch_[c].k2.assign(lay_.L, MatrixXd(capacity, lay_.D));
            ch_[c].v2.assign(lay_.L, MatrixXd(capacity, lay_.D));
        }
    }

    struct StepOut {
        RowVectorXd content_logits, pitch_logits;
        double content_dur = 0.0, pitch_dur = 0.0;
    };

    // Feeds one (content, pitch) token pair per channel; returns that
    // position's outputs per channel.
    std::array<StepOut, 2> step(const std::array<int, 2>& content_tok,
                                const std::array<int, 2>& pitch_tok) {
        const long t = n_;
        std::array<RowVectorXd, 2> x;
        const MatrixXd pe = positional_encoding(t, 1, lay_.D);
        for (int c = 0; c < n_ch_; ++c) {
            x[c] = cm(params_, lay_.emb_c, lay_.V, lay_.D).row(content_tok[c]) +
                   cm(params_, lay_.emb_p, lay_.V, lay_.D).row(pitch_tok[c]) + pe.row(0);
        }
        std::array<RowVectorXd, 2> s;
        for (int l = 0; l < lay_.L; ++l) {
            const auto& ly = lay_.layers[l];
            const bool do_cross = ly.cross && n_ch_ == 2;
            for (int c = 0; c < n_ch_; ++c) {
                const RowVectorXd a =
                    ln_row(x[c], cv(params_, ly.ln1_g, lay_.D), cv(params_, ly.ln1_b, lay_.D));
                const RowVectorXd q =
                    a * cm(params_, ly.wq, lay_.D, lay_.D).transpose() +
                    cv(params_, ly.bq, lay_.D).transpose();
                ch_[c].k[l].row(t) = a * cm(params_, ly.wk, lay_.D, lay_.D).transpose() +
                                     cv(params_, ly.bk, lay_.D).transpose();
                ch_[c].v[l].row(t) = a * cm(params_, ly.wv, lay_.D, lay_.D).transpose() +
                                     cv(params_, ly.bv, lay_.D).transpose();
                const RowVectorXd z = attend_row(q, ch_[c].k[l], ch_[c].v[l], t);
                s[c] = x[c] + z * cm(params_, ly.wo, lay_.D, lay_.D).transpose() +
                       cv(params_, ly.bo, lay_.D).transpose();
                if (do_cross) {
                    const RowVectorXd kv = ln_row(x[c], cv(params_, ly.lnkv_g, lay_.D),
                                                  cv(params_, ly.lnkv_b, lay_.D));
                    ch_[c].k2[l].row(t) =
                        kv * cm(params_, ly.wk2, lay_.D, lay_.D).transpose() +
                        cv(params_, ly.bk2, lay_.D).transpose();
                    ch_[c].v2[l].row(t) =
                        kv * cm(params_, ly.wv2, lay_.D, lay_.D).transpose() +
                        cv(params_, ly.bv2, lay_.D).transpose();
                }
            }
            for (int c = 0; c < n_ch_; ++c) {
                RowVectorXd cc;
                if (do_cross) {
                    const RowVectorXd qx = ln_row(s[c], cv(params_, ly.lnq_g, lay_.D),
                                                  cv(params_, ly.lnq_b, lay_.D));
                    const RowVectorXd q2 =
                        qx * cm(params_, ly.wq2, lay_.D, lay_.D).transpose() +
                        cv(params_, ly.bq2, lay_.D).transpose();
                    const RowVectorXd z2 =
                        attend_row(q2, ch_[1 - c].k2[l], ch_[1 - c].v2[l], t);
                    cc = s[c] + z2 * cm(params_, ly.wo2, lay_.D, lay_.D).transpose() +
                         cv(params_, ly.bo2, lay_.D).transpose();
                } else {
                    cc = s[c];
                }
                const RowVectorXd f =
                    ln_row(cc, cv(params_, ly.ln2_g, lay_.D), cv(params_, ly.ln2_b, lay_.D));
                RowVectorXd g = f * cm(params_, ly.w1, lay_.F, lay_.D).transpose() +
                                cv(params_, ly.b1, lay_.F).transpose();
                g = g.unaryExpr([](double v) { return gelu(v); });
                x[c] = cc + g * cm(params_, ly.w2, lay_.D, lay_.F).transpose() +
                       cv(params_, ly.b2, lay_.D).transpose();
            }
        }
        std::array<StepOut, 2> out;
        for (int c = 0; c < n_ch_; ++c) {
            const RowVectorXd y =
                ln_row(x[c], cv(params_, lay_.lnf_g, lay_.D), cv(params_, lay_.lnf_b, lay_.D));
            out[c].content_logits =
                y * cm(params_, lay_.head_c, lay_.V, lay_.D).transpose() +
                cv(params_, lay_.head_c_b, lay_.V).transpose() + mask_c_;
            out[c].pitch_logits = y * cm(params_, lay_.head_p, lay_.V, lay_.D).transpose() +
                                  cv(params_, lay_.head_p_b, lay_.V).transpose() + mask_p_;
            out[c].content_dur = softplus(y.dot(cv(params_, lay_.dur_c_w, lay_.D)) +
                                          params_(static_cast<Eigen::Index>(lay_.dur_c_b)));
            out[c].pitch_dur = softplus(y.dot(cv(params_, lay_.dur_p_w, lay_.D)) +
                                        params_(static_cast<Eigen::Index>(lay_.dur_p_b)));
        }
        ++n_;
        return out;
    }

  private:
    static RowVectorXd ln_row(const RowVectorXd& x, CVec g, CVec b) {
        const double m = x.mean();
        const double var = (x.array() - m).square().mean();
        const double r = 1.0 / std::sqrt(var + kLnEps);
        return (((x.array() - m) * r) * g.transpose().array()).matrix() + b.transpose();
    }

    RowVectorXd attend_row(const RowVectorXd& q, const MatrixXd& kcache,
                           const MatrixXd& vcache, long t) const {
        RowVectorXd z(lay_.D);
        const double inv = 1.0 / std::sqrt(static_cast<double>(lay_.dh));
        for (int h = 0; h < lay_.H; ++h) {
            const auto kh = kcache.block(0, h * lay_.dh, t + 1, lay_.dh);
            const auto vh = vcache.block(0, h * lay_.dh, t + 1, lay_.dh);
            RowVectorXd scores = (kh * q.middleCols(h * lay_.dh, lay_.dh).transpose())
                                     .transpose() * inv;
            softmax_row_inplace(scores);
            z.middleCols(h * lay_.dh, lay_.dh) = scores * vh;
        }
        return z;
    }

    const ModelConfig& cfg_;
    Layout lay_;
    const VectorXd& params_;
    int n_ch_;
    long n_ = 0;
    std::array<DecodeChannel, 2> ch_;
    RowVectorXd mask_c_, mask_p_;
};

}  // namespace

std::array<StreamLogits, 2> MsDlm::forward_incremental(const TrainingExample& example) const {
    const int n_ch = example.single_channel ? 1 : 2;
    const long T = static_cast<long>(example.channels[0].input_content.size());
    Decoder dec(cfg_, params_, n_ch, T);
    std::array<StreamLogits, 2> out;
    for (int c = 0; c < n_ch; ++c) {
        out[c].content_logits.resize(T, cfg_.vocab_size);
        out[c].pitch_logits.resize(T, cfg_.vocab_size);
        out[c].content_dur.resize(T);
        out[c].pitch_dur.resize(T);
    }
    for (long t = 0; t < T; ++t) {
        std::array<int, 2> ct{0, 0}, pt{0, 0};
        for (int c = 0; c < n_ch; ++c) {
            ct[c] = example.channels[c].input_content[t];
            pt[c] = example.channels[c].input_pitch[t];
        }
        const auto step = dec.step(ct, pt);
        for (int c = 0; c < n_ch; ++c) {
            out[c].content_logits.row(t) = step[c].content_logits;
            out[c].pitch_logits.row(t) = step[c].pitch_logits;
            out[c].content_dur(t) = step[c].content_dur;
            out[c].pitch_dur(t) = step[c].pitch_dur;
        }
    }
    return out;
}

Eigen::VectorXd nucleus_filter(const Eigen::VectorXd& probabilities, double p) {
    if (!(p > 0.0 && p <= 1.0)) throw InputError("nucleus p must lie in (0, 1]");
    const double total = probabilities.sum();
    if (std::fabs(total - 1.0) > 1e-6) {
        throw InputError("nucleus filter input does not sum to 1");
    }
    const long n = probabilities.size();
    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0L);
    std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
        return probabilities(a) > probabilities(b);
    });
    VectorXd kept = VectorXd::Zero(n);
    double mass = 0.0;
    for (long i = 0; i < n; ++i) {
        const long idx = order[i];
        kept(idx) = probabilities(idx);
        mass += probabilities(idx);
        if (mass >= p) break;
    }
    kept /= mass;
    return kept;
}

namespace {

long sample_from(const VectorXd& probs, Rng& rng) {
    const double r = rng.uniform();
    double acc = 0.0;
    long last = 0;
    for (long i = 0; i < probs.size(); ++i) {
        if (probs(i) <= 0.0) continue;
        acc += probs(i);
        last = i;
        if (acc >= r) return i;
    }
    return last;
}

long argmax_index(const RowVectorXd& v) {
    Eigen::Index idx = 0;
    v.maxCoeff(&idx);
    return static_cast<long>(idx);
}

VectorXd masked_softmax(const RowVectorXd& logits) {
    RowVectorXd p = logits;
    softmax_row_inplace(p);
    return p.transpose();
}

// Per-stream run emitter: holds the current unit for its predicted duration,
// then asks for a fresh sample.
struct RunState {
    int unit = 0;
    int frames_left = 0;
};

}  // namespace

std::array<StreamPair, 2> MsDlm::generate(const std::array<PrefixSequence, 2>& prefixes,
                                          const GenerateOptions& options, Rng& rng) const {
    const long L0 = static_cast<long>(prefixes[0].content.size());
    for (int c = 0; c < 2; ++c) {
        if (prefixes[c].content.size() != prefixes[c].pitch.size() ||
            static_cast<long>(prefixes[c].content.size()) != L0) {
            throw PreconditionError("prefixes disagree in length");
        }
        check_tokens(prefixes[c].content, cfg_.vocab_size);
        check_tokens(prefixes[c].pitch, cfg_.vocab_size);
    }
    if (L0 == 0) throw InputError("empty prefix");
    const int max_frames =
        options.max_frames > 0 ? options.max_frames : cfg_.max_generation_frames;
    const double p = options.nucleus_p > 0.0 ? options.nucleus_p : cfg_.nucleus_p;

    Decoder dec(cfg_, params_, 2, L0 + max_frames + 4);
    std::array<Decoder::StepOut, 2> out;
    for (long t = 0; t < L0; ++t) {
        out = dec.step({prefixes[0].content[t], prefixes[1].content[t]},
                       {prefixes[0].pitch[t], prefixes[1].pitch[t]});
    }

    auto pick = [&](const RowVectorXd& logits) -> long {
        if (options.greedy) return argmax_index(logits);
        return sample_from(nucleus_filter(masked_softmax(logits), p), rng);
    };
    auto clamp_duration = [&](double d) {
        return static_cast<int>(std::clamp<long>(std::llround(d), 1, cfg_.max_duration));
    };

    std::array<std::vector<int>, 2> content_steps, pitch_steps;
    std::array<RunState, 2> content_run, pitch_run;
    bool stop = false;
    for (int j = 1; !stop; ++j) {
        std::array<int, 2> ct{}, pt{};
        for (int c = 0; c < 2; ++c) {
            // Content stream first, then pitch: fixed sampling order keeps
            // the random sequence reproducible.
            if (content_run[c].frames_left > 0) {
                ct[c] = content_run[c].unit;
                --content_run[c].frames_left;
            } else {
                const long tok = pick(out[c].content_logits);
                if (tok == cfg_.eos_id) {
                    stop = true;
                    ct[c] = cfg_.eos_id;
                } else {
                    ct[c] = static_cast<int>(tok);
                    content_run[c].unit = ct[c];
                    content_run[c].frames_left = clamp_duration(out[c].content_dur) - 1;
                }
            }
            if (j == 1) {
                pt[c] = cfg_.pad_id;  // structural delay slot; never sampled
            } else if (pitch_run[c].frames_left > 0) {
                pt[c] = pitch_run[c].unit;
                --pitch_run[c].frames_left;
            } else {
                long tok = pick(out[c].pitch_logits);
                if (tok == cfg_.eos_id) tok = cfg_.pad_id;  // pitch carries no stop signal
                pt[c] = static_cast<int>(tok);
                pitch_run[c].unit = pt[c];
                pitch_run[c].frames_left = clamp_duration(out[c].pitch_dur) - 1;
            }
        }
        if (stop) {
            // The pitch tokens of the stop step complete the delayed stream;
            // the content tokens of this step are discarded.
            for (int c = 0; c < 2; ++c) pitch_steps[c].push_back(pt[c]);
            break;
        }
        for (int c = 0; c < 2; ++c) {
            content_steps[c].push_back(ct[c]);
            pitch_steps[c].push_back(pt[c]);
        }
        if (static_cast<int>(content_steps[0].size()) >= max_frames) {
            // One extra step supplies the final lagging pitch tokens.
            out = dec.step(ct, pt);
            for (int c = 0; c < 2; ++c) {
                int tok;
                if (pitch_run[c].frames_left > 0) {
                    tok = pitch_run[c].unit;
                } else {
                    long s = pick(out[c].pitch_logits);
                    if (s == cfg_.eos_id) s = cfg_.pad_id;
                    tok = static_cast<int>(s);
                }
                pitch_steps[c].push_back(tok);
            }
            break;
        }
        out = dec.step(ct, pt);
    }

    // Pitch lags by one step: drop the forced PAD so the streams align, strip
    // the end-of-frames PAD tail, and map stray non-units to silence.
    std::array<StreamPair, 2> result;
    size_t longest = 0;
    for (int c = 0; c < 2; ++c) {
        std::vector<int>& content = content_steps[c];
        std::vector<int> pitch(pitch_steps[c].begin() + std::min<size_t>(1, pitch_steps[c].size()),
                               pitch_steps[c].end());
        while (!content.empty() && content.back() == cfg_.pad_id) {
            content.pop_back();
            pitch.pop_back();
        }
        for (int& u : content) {
            if (u < 0 || u >= cfg_.n_units) {
                log_debug("stray non-unit content token replaced with silence");
                u = 0;
            }
        }
        for (int& u : pitch) {
            if (u < 0 || u >= cfg_.n_pitch) u = 0;
        }
        result[c].content = std::move(content);
        result[c].pitch = std::move(pitch);
        longest = std::max(longest, result[c].content.size());
    }
    for (int c = 0; c < 2; ++c) {
        result[c].content.resize(longest, 0);
        result[c].pitch.resize(longest, 0);
    }
    return result;
}

void MsDlm::save(const std::string& path) const {
    BinWriter w(path);
    w.magic("DVMD", 1);
    w.i32(cfg_.vocab_size);
    w.i32(cfg_.n_units);
    w.i32(cfg_.n_pitch);
    w.i32(cfg_.pad_id);
    w.i32(cfg_.eos_id);
    w.i32(cfg_.num_layers);
    w.i32(cfg_.num_cross_layers);
    w.i32(cfg_.heads);
    w.i32(cfg_.embed_dim);
    w.i32(cfg_.ffn_dim);
    w.i32(cfg_.context_frames);
    w.i32(cfg_.max_duration);
    w.i32(cfg_.max_generation_frames);
    w.f64(cfg_.nucleus_p);
    w.u64(static_cast<uint64_t>(params_.size()));
    for (Eigen::Index i = 0; i < params_.size(); ++i) w.f64(params_(i));
}

MsDlm MsDlm::load(const std::string& path) {
    BinReader r(path);
    r.magic("DVMD", 1);
    ModelConfig cfg;
    cfg.vocab_size = r.i32();
    cfg.n_units = r.i32();
    cfg.n_pitch = r.i32();
    cfg.pad_id = r.i32();
    cfg.eos_id = r.i32();
    cfg.num_layers = r.i32();
    cfg.num_cross_layers = r.i32();
    cfg.heads = r.i32();
    cfg.embed_dim = r.i32();
    cfg.ffn_dim = r.i32();
    cfg.context_frames = r.i32();
    cfg.max_duration = r.i32();
    cfg.max_generation_frames = r.i32();
    cfg.nucleus_p = r.f64();
    MsDlm model(cfg, 0);
    const uint64_t n = r.u64();
    if (n != model.parameter_count()) {
        throw InputError("checkpoint parameter count does not match its configuration");
    }
    for (uint64_t i = 0; i < n; ++i) model.params_(static_cast<Eigen::Index>(i)) = r.f64();
    return model;
}

double lr_schedule(int step, const TrainConfig& config) {
    const double s = static_cast<double>(step + 1);
    const double warmup = static_cast<double>(std::max(1, config.warmup_steps));
    if (s <= warmup) {
        return config.initial_lr + (config.peak_lr - config.initial_lr) * s / warmup;
    }
    return config.peak_lr * std::sqrt(warmup / s);
}

TrainResult train(MsDlm& model, const std::vector<TrainingExample>& dataset,
                  const TrainConfig& config) {
    if (dataset.empty()) throw InputError("training dataset is empty");
    if (config.steps < 0 || config.batch_size < 1) throw InputError("bad training settings");

    const Eigen::Index n_params = static_cast<Eigen::Index>(model.parameter_count());
    VectorXd second_moment = VectorXd::Zero(n_params);
    VectorXd grad = VectorXd::Zero(n_params);

    Rng rng(config.seed);
    std::vector<size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), size_t{0});
    rng.shuffle(order);
    size_t cursor = 0;
    auto next_index = [&]() {
        if (cursor >= order.size()) {
            rng.shuffle(order);
            cursor = 0;
        }
        return order[cursor++];
    };

    TrainResult result;
    result.curve.reserve(config.steps);
    const int n_threads = std::max(1, config.threads);
    for (int step = 0; step < config.steps; ++step) {
        std::vector<size_t> batch(config.batch_size);
        for (auto& b : batch) b = next_index();

        grad.setZero();
        LossBreakdown total;
        // Per-example gradient buffers reduced in index order: the rounding
        // is identical whichever thread count computed them.
        std::vector<VectorXd> grads(batch.size());
        std::vector<LossBreakdown> losses(batch.size());
        if (n_threads == 1 || batch.size() == 1) {
            for (size_t i = 0; i < batch.size(); ++i) {
                grads[i] = VectorXd::Zero(n_params);
                losses[i] = model.loss_and_gradient(dataset[batch[i]], grads[i]);
            }
        } else {
            std::vector<std::thread> workers;
            std::atomic<size_t> next{0};
            for (int w = 0; w < n_threads; ++w) {
                workers.emplace_back([&]() {
                    for (;;) {
                        const size_t i = next.fetch_add(1);
                        if (i >= batch.size()) return;
                        grads[i] = VectorXd::Zero(n_params);
                        losses[i] = model.loss_and_gradient(dataset[batch[i]], grads[i]);
                    }
                });
            }
            for (auto& w : workers) w.join();
        }
        for (size_t i = 0; i < batch.size(); ++i) {
            grad += grads[i];
            total.unit_nll += losses[i].unit_nll;
            total.duration_l1 += losses[i].duration_l1;
            total.edges += losses[i].edges;
        }
        total.total = total.unit_nll + total.duration_l1;
        if (!std::isfinite(total.total)) {
            throw PreconditionError("training diverged (non-finite loss) at step " +
                                    std::to_string(step));
        }
        grad /= static_cast<double>(batch.size());

        const double lr = lr_schedule(step, config);
        // Momentum-free adaptive update: scale each coordinate by the root of
        // a running second-moment average.
        second_moment = config.rms_decay * second_moment +
                        (1.0 - config.rms_decay) * grad.cwiseProduct(grad);
        model.parameters() -=
            lr * grad.cwiseQuotient((second_moment.cwiseSqrt().array() + config.eps).matrix());

        StepRecord rec;
        rec.step = step;
        rec.lr = lr;
        rec.loss = total.total;
        rec.unit_nll = total.unit_nll;
        rec.duration_l1 = total.duration_l1;
        rec.edges = total.edges;
        result.curve.push_back(rec);
        if (config.log_every > 0 && (step % config.log_every == 0 || step + 1 == config.steps)) {
            log_info("step " + std::to_string(step) + " loss " + std::to_string(total.total) +
                     " per-edge-nll " + std::to_string(total.per_edge_nll()));
        }
    }
    if (!result.curve.empty()) {
        const auto& last = result.curve.back();
        result.final_per_edge_nll =
            last.edges > 0 ? last.unit_nll / static_cast<double>(last.edges) : 0.0;
    }
    return result;
}

void save_loss_curve(const std::string& path, const std::vector<StepRecord>& curve) {
    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw InputError("cannot open " + path + " for writing");
    std::fprintf(f, "step,lr,loss,unit_nll,duration_l1,edges,per_edge_nll\n");
    for (const auto& r : curve) {
        const double per_edge = r.edges > 0 ? r.unit_nll / static_cast<double>(r.edges) : 0.0;
        std::fprintf(f, "%d,%.8g,%.8g,%.8g,%.8g,%ld,%.8g\n", r.step, r.lr, r.loss, r.unit_nll,
                     r.duration_l1, r.edges, per_edge);
    }
    std::fclose(f);
}

}  // namespace duovox
