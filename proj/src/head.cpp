#include "gsr/head.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <tuple>

#include <json.hpp>

#include "gsr/io.hpp"

namespace gsr {
namespace {

// y (m x n) += x (m x k) * W (k x n)
void matmul_acc(const double* x, const double* w, double* y, std::size_t m, std::size_t k,
                std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* xi = x + i * k;
        double* yi = y + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double xv = xi[kk];
            if (xv == 0.0) continue;
            const double* wr = w + kk * n;
            for (std::size_t j = 0; j < n; ++j) yi[j] += xv * wr[j];
        }
    }
}

// dW (k x n) += x^T (k x m) * dy (m x n)
void matmul_xt_acc(const double* x, const double* dy, double* dw, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* xi = x + i * k;
        const double* di = dy + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double xv = xi[kk];
            if (xv == 0.0) continue;
            double* dwr = dw + kk * n;
            for (std::size_t j = 0; j < n; ++j) dwr[j] += xv * di[j];
        }
    }
}

// dx (m x k) += dy (m x n) * W^T (n x k)
void matmul_wt_acc(const double* dy, const double* w, double* dx, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* di = dy + i * n;
        double* dxi = dx + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double dv = di[j];
            if (dv == 0.0) continue;
            for (std::size_t kk = 0; kk < k; ++kk) dxi[kk] += dv * w[kk * n + j];
        }
    }
}

void add_bias(double* y, const double* b, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] += b[j];
}

void bias_grad(const double* dy, double* db, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

TauVector effective_tau(const TauVector& tau, double scene_extent) {
    TauVector t = tau;
    for (int k = 0; k < 3; ++k) t[k] *= scene_extent;
    return t;
}

} // namespace

HeadParams::Layout HeadParams::layout() const {
    Layout l{};
    const std::size_t td = static_cast<std::size_t>(shape.token_dim());
    const std::size_t dm = static_cast<std::size_t>(shape.d_model);
    const std::size_t hid = static_cast<std::size_t>(shape.mlp_hidden);
    std::size_t off = 0;
    auto take = [&off](std::size_t n) {
        const std::size_t o = off;
        off += n;
        return o;
    };
    l.embed_w = take(td * dm);
    l.embed_b = take(dm);
    l.wq = take(dm * dm);
    l.bq = take(dm);
    l.wk = take(dm * dm);
    l.bk = take(dm);
    l.wv = take(dm * dm);
    l.bv = take(dm);
    l.wo = take(dm * dm);
    l.bo = take(dm);
    l.w1 = take(dm * hid);
    l.b1 = take(hid);
    l.w2 = take(hid * kResidualDim);
    l.b2 = take(kResidualDim);
    l.sigma_step = take(kResidualDim);
    l.total = off;
    return l;
}

bool HeadParams::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

HeadParams init_head_params(const HeadShape& shape, std::uint64_t seed) {
    HeadParams p;
    p.shape = shape;
    const auto l = p.layout();
    p.data.assign(l.total, 0.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    auto fill = [&](std::size_t off, std::size_t rows, std::size_t cols, double gain) {
        const double scale = gain / std::sqrt(static_cast<double>(rows));
        for (std::size_t i = 0; i < rows * cols; ++i) p.data[off + i] = scale * normal(rng);
    };
    const auto td = static_cast<std::size_t>(shape.token_dim());
    const auto dm = static_cast<std::size_t>(shape.d_model);
    const auto hid = static_cast<std::size_t>(shape.mlp_hidden);
    fill(l.embed_w, td, dm, 1.0);
    fill(l.wq, dm, dm, 1.0);
    fill(l.wk, dm, dm, 1.0);
    fill(l.wv, dm, dm, 1.0);
    fill(l.wo, dm, dm, 1.0);
    fill(l.w1, dm, hid, 1.0);
    // Small output layer so an untrained head starts near the identity update.
    fill(l.w2, hid, kResidualDim, 0.1);
    for (int k = 0; k < kResidualDim; ++k) p.data[l.sigma_step + k] = 1.0;
    return p;
}

HeadParams zeros_like(const HeadParams& params) {
    HeadParams p;
    p.shape = params.shape;
    p.tau = params.tau;
    p.data.assign(params.data.size(), 0.0);
    return p;
}

void save_head_params(const std::string& path, const HeadParams& params) {
    const auto l = params.layout();
    TensorFile tf;
    nlohmann::json meta;
    meta["d_model"] = params.shape.d_model;
    meta["heads"] = params.shape.heads;
    meta["mlp_hidden"] = params.shape.mlp_hidden;
    meta["cue_dim"] = params.shape.cue_dim;
    meta["feat_dim"] = params.shape.feat_dim;
    meta["tau"] = params.tau;
    tf.meta_json = meta.dump();

    const auto td = static_cast<std::uint64_t>(params.shape.token_dim());
    const auto dm = static_cast<std::uint64_t>(params.shape.d_model);
    const auto hid = static_cast<std::uint64_t>(params.shape.mlp_hidden);
    const std::uint64_t out = kResidualDim;

    auto block = [&](const char* name, std::size_t off, std::vector<std::uint64_t> shape) {
        TensorBlock t;
        t.name = name;
        t.shape = std::move(shape);
        t.data.resize(t.element_count());
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            t.data[i] = static_cast<float>(params.data[off + i]);
        }
        tf.tensors.push_back(std::move(t));
    };
    block("embed_w", l.embed_w, {td, dm});
    block("embed_b", l.embed_b, {dm});
    block("attn_wq", l.wq, {dm, dm});
    block("attn_bq", l.bq, {dm});
    block("attn_wk", l.wk, {dm, dm});
    block("attn_bk", l.bk, {dm});
    block("attn_wv", l.wv, {dm, dm});
    block("attn_bv", l.bv, {dm});
    block("attn_wo", l.wo, {dm, dm});
    block("attn_bo", l.bo, {dm});
    block("mlp_w1", l.w1, {dm, hid});
    block("mlp_b1", l.b1, {hid});
    block("mlp_w2", l.w2, {hid, out});
    block("mlp_b2", l.b2, {out});
    block("sigma_step", l.sigma_step, {out});
    save_tensor_file(path, tf);
}

HeadParams load_head_params(const std::string& path) {
    const TensorFile tf = load_tensor_file(path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(tf.meta_json);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": bad head checkpoint metadata: " + e.what());
    }
    HeadParams p;
    try {
        p.shape.d_model = meta.at("d_model").get<int>();
        p.shape.heads = meta.at("heads").get<int>();
        p.shape.mlp_hidden = meta.at("mlp_hidden").get<int>();
        p.shape.cue_dim = meta.at("cue_dim").get<int>();
        p.shape.feat_dim = meta.at("feat_dim").get<int>();
        const auto tau = meta.at("tau").get<std::vector<double>>();
        if (tau.size() != kResidualDim) throw IoError(path + ": tau must have 10 entries");
        std::copy(tau.begin(), tau.end(), p.tau.begin());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": bad head checkpoint metadata: " + e.what());
    }
    if (p.shape.d_model % p.shape.heads != 0) {
        throw IoError(path + ": d_model must be divisible by heads");
    }
    const auto l = p.layout();
    p.data.assign(l.total, 0.0);

    auto copy_block = [&](const char* name, std::size_t off, std::size_t count) {
        const TensorBlock& t = tf.find(name);
        if (t.data.size() != count) {
            throw IoError(path + ": tensor '" + std::string(name) + "' has wrong size");
        }
        for (std::size_t i = 0; i < count; ++i) p.data[off + i] = t.data[i];
    };
    const auto td = static_cast<std::size_t>(p.shape.token_dim());
    const auto dm = static_cast<std::size_t>(p.shape.d_model);
    const auto hid = static_cast<std::size_t>(p.shape.mlp_hidden);
    copy_block("embed_w", l.embed_w, td * dm);
    copy_block("embed_b", l.embed_b, dm);
    copy_block("attn_wq", l.wq, dm * dm);
    copy_block("attn_bq", l.bq, dm);
    copy_block("attn_wk", l.wk, dm * dm);
    copy_block("attn_bk", l.bk, dm);
    copy_block("attn_wv", l.wv, dm * dm);
    copy_block("attn_bv", l.bv, dm);
    copy_block("attn_wo", l.wo, dm * dm);
    copy_block("attn_bo", l.bo, dm);
    copy_block("mlp_w1", l.w1, dm * hid);
    copy_block("mlp_b1", l.b1, hid);
    copy_block("mlp_w2", l.w2, hid * kResidualDim);
    copy_block("mlp_b2", l.b2, kResidualDim);
    copy_block("sigma_step", l.sigma_step, kResidualDim);
    if (!p.all_finite()) throw NumericError(path + ": checkpoint contains non-finite values");
    for (int k = 0; k < kResidualDim; ++k) {
        if (!(p.data[l.sigma_step + k] > 0.0)) {
            throw NumericError(path + ": sigma_step entries must be positive");
        }
    }
    return p;
}

WindowPartition build_windows(const GaussianScene& scene, double cell_size, int step_index,
                              int k_win) {
    if (!(cell_size > 0.0)) throw UsageError("build_windows: cell_size must be positive");
    WindowPartition part;
    part.cell_size = cell_size;
    const std::size_t n = scene.size();
    part.window_of.assign(n, 0);
    if (n == 0) return part;

    Vec3 lo = scene.gaussians[0].position, hi = lo;
    for (const auto& g : scene.gaussians) {
        lo = cwise_min(lo, g.position);
        hi = cwise_max(hi, g.position);
    }
    Vec3 origin = lo;
    if (step_index % 2 != 0) {
        origin = origin - Vec3{cell_size / 2, cell_size / 2, cell_size / 2};
    }
    part.origin = origin;

    auto cell_of = [&](const Vec3& p) {
        return std::tuple<int, int, int>{
            static_cast<int>(std::floor((p.x - origin.x) / cell_size)),
            static_cast<int>(std::floor((p.y - origin.y) / cell_size)),
            static_cast<int>(std::floor((p.z - origin.z) / cell_size))};
    };

    // Deterministic window ids: lexicographic cell order.
    std::map<std::tuple<int, int, int>, std::uint32_t> ids;
    std::vector<std::tuple<int, int, int>> cell_of_gaussian(n);
    for (std::size_t i = 0; i < n; ++i) {
        cell_of_gaussian[i] = cell_of(scene.gaussians[i].position);
        ids.emplace(cell_of_gaussian[i], 0);
    }
    std::uint32_t next = 0;
    for (auto& kv : ids) kv.second = next++;

    part.windows.resize(ids.size());
    for (const auto& [cell, id] : ids) {
        auto& w = part.windows[id];
        w.center = origin + Vec3{(std::get<0>(cell) + 0.5) * cell_size,
                                 (std::get<1>(cell) + 0.5) * cell_size,
                                 (std::get<2>(cell) + 0.5) * cell_size};
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t id = ids.at(cell_of_gaussian[i]);
        part.window_of[i] = id;
        part.windows[id].members.push_back(static_cast<std::uint32_t>(i));
    }

    for (auto& w : part.windows) {
        if (static_cast<int>(w.members.size()) <= k_win) {
            w.attn_members = w.members;
            continue;
        }
        std::vector<std::uint32_t> by_opacity = w.members;
        std::sort(by_opacity.begin(), by_opacity.end(), [&](std::uint32_t a, std::uint32_t b) {
            const double oa = scene.gaussians[a].opacity_logit;
            const double ob = scene.gaussians[b].opacity_logit;
            if (oa != ob) return oa > ob;
            return a < b;
        });
        by_opacity.resize(k_win);
        std::sort(by_opacity.begin(), by_opacity.end());
        w.attn_members = std::move(by_opacity);
    }
    return part;
}

std::vector<double> build_tokens(const GaussianScene& scene, const double* observation,
                                 const double* prior, const WindowPartition& partition,
                                 const HeadShape& shape) {
    const std::size_t n = scene.size();
    if (partition.window_of.size() != n) {
        throw NumericError("build_tokens: partition does not match scene");
    }
    if (scene.feat_dim != 0 && scene.feat_dim != shape.feat_dim) {
        throw NumericError("build_tokens: scene feature width does not match head");
    }
    const std::size_t td = static_cast<std::size_t>(shape.token_dim());
    const std::size_t cd = static_cast<std::size_t>(shape.cue_dim);
    std::vector<double> tokens(n * td, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const Gaussian& g = scene.gaussians[i];
        const Vec3 center = partition.windows[partition.window_of[i]].center;
        double* t = tokens.data() + i * td;
        t[0] = (g.position.x - center.x) / partition.cell_size;
        t[1] = (g.position.y - center.y) / partition.cell_size;
        t[2] = (g.position.z - center.z) / partition.cell_size;
        t[3] = g.log_scale.x;
        t[4] = g.log_scale.y;
        t[5] = g.log_scale.z;
        t[6] = g.color.x;
        t[7] = g.color.y;
        t[8] = g.color.z;
        t[9] = g.opacity_logit;
        if (scene.feat_dim == shape.feat_dim && shape.feat_dim > 0) {
            const double* f = scene.feature_row(i);
            for (int d = 0; d < shape.feat_dim; ++d) t[10 + d] = f[d];
        }
        double* cue = t + shape.state_dim();
        if (observation) {
            for (std::size_t d = 0; d < cd; ++d) cue[d] = observation[i * cd + d];
        }
        if (prior) {
            for (std::size_t d = 0; d < cd; ++d) cue[cd + d] = prior[i * cd + d];
        }
    }
    return tokens;
}

std::vector<double> head_forward(const std::vector<double>& tokens, std::size_t n,
                                 const WindowPartition& partition, const HeadParams& params,
                                 double scene_extent, HeadForwardCache* cache) {
    if (!params.all_finite()) throw NumericError("head_forward: non-finite parameters");
    const HeadShape& shape = params.shape;
    const std::size_t td = static_cast<std::size_t>(shape.token_dim());
    const std::size_t dm = static_cast<std::size_t>(shape.d_model);
    const std::size_t hid = static_cast<std::size_t>(shape.mlp_hidden);
    const std::size_t dh = static_cast<std::size_t>(shape.head_dim());
    const int heads = shape.heads;
    if (tokens.size() != n * td) throw NumericError("head_forward: token matrix shape mismatch");

    const auto l = params.layout();
    const TauVector tau = effective_tau(params.tau, scene_extent);
    const double* sigma = params.at(l.sigma_step);

    std::vector<double> out(n * kResidualDim, 0.0);
    if (cache) {
        cache->windows.assign(partition.windows.size(), {});
        cache->scene_extent = scene_extent;
    }

    for (std::size_t wi = 0; wi < partition.windows.size(); ++wi) {
        const auto& win = partition.windows[wi];
        const std::size_t k = win.members.size();
        if (k == 0) continue;
        const std::size_t ka = win.attn_members.size();

        std::vector<double> member_tokens(k * td);
        for (std::size_t r = 0; r < k; ++r) {
            const double* src = tokens.data() + static_cast<std::size_t>(win.members[r]) * td;
            std::copy(src, src + td, member_tokens.begin() + r * td);
        }

        std::vector<double> embed(k * dm, 0.0);
        matmul_acc(member_tokens.data(), params.at(l.embed_w), embed.data(), k, td, dm);
        add_bias(embed.data(), params.at(l.embed_b), k, dm);

        // Attention among the capped member set. Rows of `attn_rows` index
        // into the window member list.
        std::vector<std::size_t> attn_rows(ka);
        {
            std::size_t j = 0;
            for (std::size_t r = 0; r < k && j < ka; ++r) {
                if (win.members[r] == win.attn_members[j]) attn_rows[j++] = r;
            }
        }

        std::vector<double> ea(ka * dm);
        for (std::size_t r = 0; r < ka; ++r) {
            std::copy(embed.begin() + attn_rows[r] * dm, embed.begin() + (attn_rows[r] + 1) * dm,
                      ea.begin() + r * dm);
        }

        std::vector<double> q(ka * dm, 0.0), kk(ka * dm, 0.0), v(ka * dm, 0.0);
        matmul_acc(ea.data(), params.at(l.wq), q.data(), ka, dm, dm);
        add_bias(q.data(), params.at(l.bq), ka, dm);
        matmul_acc(ea.data(), params.at(l.wk), kk.data(), ka, dm, dm);
        add_bias(kk.data(), params.at(l.bk), ka, dm);
        matmul_acc(ea.data(), params.at(l.wv), v.data(), ka, dm, dm);
        add_bias(v.data(), params.at(l.bv), ka, dm);

        std::vector<double> attn(static_cast<std::size_t>(heads) * ka * ka, 0.0);
        std::vector<double> hcat(ka * dm, 0.0);
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int h = 0; h < heads; ++h) {
            const std::size_t hoff = static_cast<std::size_t>(h) * dh;
            double* a = attn.data() + static_cast<std::size_t>(h) * ka * ka;
            for (std::size_t i = 0; i < ka; ++i) {
                double maxv = -1e300;
                for (std::size_t j = 0; j < ka; ++j) {
                    double s = 0.0;
                    for (std::size_t d = 0; d < dh; ++d) {
                        s += q[i * dm + hoff + d] * kk[j * dm + hoff + d];
                    }
                    s *= inv_sqrt_dh;
                    a[i * ka + j] = s;
                    maxv = std::max(maxv, s);
                }
                double sum = 0.0;
                for (std::size_t j = 0; j < ka; ++j) {
                    a[i * ka + j] = std::exp(a[i * ka + j] - maxv);
                    sum += a[i * ka + j];
                }
                for (std::size_t j = 0; j < ka; ++j) a[i * ka + j] /= sum;
                for (std::size_t j = 0; j < ka; ++j) {
                    const double w = a[i * ka + j];
                    for (std::size_t d = 0; d < dh; ++d) {
                        hcat[i * dm + hoff + d] += w * v[j * dm + hoff + d];
                    }
                }
            }
        }

        std::vector<double> post_attn = embed;
        {
            std::vector<double> proj(ka * dm, 0.0);
            matmul_acc(hcat.data(), params.at(l.wo), proj.data(), ka, dm, dm);
            add_bias(proj.data(), params.at(l.bo), ka, dm);
            for (std::size_t r = 0; r < ka; ++r) {
                double* dst = post_attn.data() + attn_rows[r] * dm;
                const double* src = proj.data() + r * dm;
                for (std::size_t d = 0; d < dm; ++d) dst[d] += src[d];
            }
        }

        std::vector<double> mlp_pre(k * hid, 0.0);
        matmul_acc(post_attn.data(), params.at(l.w1), mlp_pre.data(), k, dm, hid);
        add_bias(mlp_pre.data(), params.at(l.b1), k, hid);
        std::vector<double> mlp_act(k * hid);
        for (std::size_t i = 0; i < mlp_pre.size(); ++i) mlp_act[i] = gelu(mlp_pre[i]);

        std::vector<double> raw(k * kResidualDim, 0.0);
        matmul_acc(mlp_act.data(), params.at(l.w2), raw.data(), k, hid, kResidualDim);
        add_bias(raw.data(), params.at(l.b2), k, kResidualDim);

        for (std::size_t r = 0; r < k; ++r) {
            double* dst = out.data() + static_cast<std::size_t>(win.members[r]) * kResidualDim;
            for (int c = 0; c < kResidualDim; ++c) {
                dst[c] = tau[c] * std::tanh(sigma[c] * raw[r * kResidualDim + c]);
            }
        }

        if (cache) {
            auto& wc = cache->windows[wi];
            wc.member_tokens = std::move(member_tokens);
            wc.embed = std::move(embed);
            wc.q = std::move(q);
            wc.k = std::move(kk);
            wc.v = std::move(v);
            wc.attn = std::move(attn);
            wc.hcat = std::move(hcat);
            wc.post_attn = std::move(post_attn);
            wc.mlp_pre = std::move(mlp_pre);
            wc.mlp_act = std::move(mlp_act);
            wc.raw = std::move(raw);
        }
    }
    return out;
}

void head_backward(const HeadForwardCache& cache, const WindowPartition& partition,
                   const HeadParams& params, const std::vector<double>& d_out,
                   HeadParams& dparams, std::vector<double>& dtokens) {
    const HeadShape& shape = params.shape;
    const std::size_t td = static_cast<std::size_t>(shape.token_dim());
    const std::size_t dm = static_cast<std::size_t>(shape.d_model);
    const std::size_t hid = static_cast<std::size_t>(shape.mlp_hidden);
    const std::size_t dh = static_cast<std::size_t>(shape.head_dim());
    const int heads = shape.heads;
    const auto l = params.layout();
    const TauVector tau = effective_tau(params.tau, cache.scene_extent);
    const double* sigma = params.at(l.sigma_step);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    for (std::size_t wi = 0; wi < partition.windows.size(); ++wi) {
        const auto& win = partition.windows[wi];
        const std::size_t k = win.members.size();
        if (k == 0) continue;
        const auto& wc = cache.windows[wi];
        const std::size_t ka = win.attn_members.size();

        std::vector<std::size_t> attn_rows(ka);
        {
            std::size_t j = 0;
            for (std::size_t r = 0; r < k && j < ka; ++r) {
                if (win.members[r] == win.attn_members[j]) attn_rows[j++] = r;
            }
        }

        // tanh + sigma scaling.
        std::vector<double> draw(k * kResidualDim);
        for (std::size_t r = 0; r < k; ++r) {
            const double* go = d_out.data() + static_cast<std::size_t>(win.members[r]) * kResidualDim;
            for (int c = 0; c < kResidualDim; ++c) {
                const double rawv = wc.raw[r * kResidualDim + c];
                const double th = std::tanh(sigma[c] * rawv);
                const double sech2 = 1.0 - th * th;
                draw[r * kResidualDim + c] = go[c] * tau[c] * sigma[c] * sech2;
                dparams.data[l.sigma_step + c] += go[c] * tau[c] * rawv * sech2;
            }
        }

        // MLP output layer.
        matmul_xt_acc(wc.mlp_act.data(), draw.data(), dparams.at(l.w2), k, hid, kResidualDim);
        bias_grad(draw.data(), dparams.at(l.b2), k, kResidualDim);
        std::vector<double> dact(k * hid, 0.0);
        matmul_wt_acc(draw.data(), params.at(l.w2), dact.data(), k, hid, kResidualDim);
        for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= gelu_grad(wc.mlp_pre[i]);

        matmul_xt_acc(wc.post_attn.data(), dact.data(), dparams.at(l.w1), k, dm, hid);
        bias_grad(dact.data(), dparams.at(l.b1), k, hid);
        std::vector<double> dpost(k * dm, 0.0);
        matmul_wt_acc(dact.data(), params.at(l.w1), dpost.data(), k, dm, hid);

        // Residual split: embed gets dpost everywhere; the attention branch
        // receives the attn-row slice.
        std::vector<double> dembed = dpost;
        if (ka > 0) {
            std::vector<double> dproj(ka * dm);
            for (std::size_t r = 0; r < ka; ++r) {
                std::copy(dpost.begin() + attn_rows[r] * dm,
                          dpost.begin() + (attn_rows[r] + 1) * dm, dproj.begin() + r * dm);
            }
            std::vector<double> ea(ka * dm);
            for (std::size_t r = 0; r < ka; ++r) {
                std::copy(wc.embed.begin() + attn_rows[r] * dm,
                          wc.embed.begin() + (attn_rows[r] + 1) * dm, ea.begin() + r * dm);
            }

            matmul_xt_acc(wc.hcat.data(), dproj.data(), dparams.at(l.wo), ka, dm, dm);
            bias_grad(dproj.data(), dparams.at(l.bo), ka, dm);
            std::vector<double> dhcat(ka * dm, 0.0);
            matmul_wt_acc(dproj.data(), params.at(l.wo), dhcat.data(), ka, dm, dm);

            std::vector<double> dq(ka * dm, 0.0), dk(ka * dm, 0.0), dv(ka * dm, 0.0);
            for (int h = 0; h < heads; ++h) {
                const std::size_t hoff = static_cast<std::size_t>(h) * dh;
                const double* a = wc.attn.data() + static_cast<std::size_t>(h) * ka * ka;
                // dA = dH V^T ; dV = A^T dH (per head).
                std::vector<double> da(ka * ka, 0.0);
                for (std::size_t i = 0; i < ka; ++i) {
                    for (std::size_t j = 0; j < ka; ++j) {
                        double s = 0.0;
                        for (std::size_t d = 0; d < dh; ++d) {
                            s += dhcat[i * dm + hoff + d] * wc.v[j * dm + hoff + d];
                        }
                        da[i * ka + j] = s;
                        const double w = a[i * ka + j];
                        for (std::size_t d = 0; d < dh; ++d) {
                            dv[j * dm + hoff + d] += w * dhcat[i * dm + hoff + d];
                        }
                    }
                }
                // Softmax rows: dS = A o (dA - rowdot(dA, A)).
                for (std::size_t i = 0; i < ka; ++i) {
                    double rowdot = 0.0;
                    for (std::size_t j = 0; j < ka; ++j) {
                        rowdot += da[i * ka + j] * a[i * ka + j];
                    }
                    for (std::size_t j = 0; j < ka; ++j) {
                        const double ds = a[i * ka + j] * (da[i * ka + j] - rowdot) * inv_sqrt_dh;
                        for (std::size_t d = 0; d < dh; ++d) {
                            dq[i * dm + hoff + d] += ds * wc.k[j * dm + hoff + d];
                            dk[j * dm + hoff + d] += ds * wc.q[i * dm + hoff + d];
                        }
                    }
                }
            }

            matmul_xt_acc(ea.data(), dq.data(), dparams.at(l.wq), ka, dm, dm);
            bias_grad(dq.data(), dparams.at(l.bq), ka, dm);
            matmul_xt_acc(ea.data(), dk.data(), dparams.at(l.wk), ka, dm, dm);
            bias_grad(dk.data(), dparams.at(l.bk), ka, dm);
            matmul_xt_acc(ea.data(), dv.data(), dparams.at(l.wv), ka, dm, dm);
            bias_grad(dv.data(), dparams.at(l.bv), ka, dm);

            std::vector<double> dea(ka * dm, 0.0);
            matmul_wt_acc(dq.data(), params.at(l.wq), dea.data(), ka, dm, dm);
            matmul_wt_acc(dk.data(), params.at(l.wk), dea.data(), ka, dm, dm);
            matmul_wt_acc(dv.data(), params.at(l.wv), dea.data(), ka, dm, dm);
            for (std::size_t r = 0; r < ka; ++r) {
                double* dst = dembed.data() + attn_rows[r] * dm;
                const double* src = dea.data() + r * dm;
                for (std::size_t d = 0; d < dm; ++d) dst[d] += src[d];
            }
        }

        matmul_xt_acc(wc.member_tokens.data(), dembed.data(), dparams.at(l.embed_w), k, td, dm);
        bias_grad(dembed.data(), dparams.at(l.embed_b), k, dm);
        std::vector<double> dmember(k * td, 0.0);
        matmul_wt_acc(dembed.data(), params.at(l.embed_w), dmember.data(), k, td, dm);
        for (std::size_t r = 0; r < k; ++r) {
            double* dst = dtokens.data() + static_cast<std::size_t>(win.members[r]) * td;
            const double* src = dmember.data() + r * td;
            for (std::size_t d = 0; d < td; ++d) dst[d] += src[d];
        }
    }
}

GaussianScene update_scene(const GaussianScene& scene, const std::vector<double>& delta,
                           std::vector<std::uint8_t>* color_gates) {
    const std::size_t n = scene.size();
    if (delta.size() != n * kResidualDim) {
        throw NumericError("update_scene: residual matrix shape mismatch");
    }
    for (double v : delta) {
        if (!std::isfinite(v)) throw NumericError("update_scene: non-finite residual");
    }
    GaussianScene out = scene;
    if (color_gates) color_gates->assign(n * 3, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* d = delta.data() + i * kResidualDim;
        Gaussian& g = out.gaussians[i];
        g.position += Vec3{d[0], d[1], d[2]};
        g.log_scale += Vec3{d[3], d[4], d[5]};
        for (int c = 0; c < 3; ++c) {
            const double v = g.color[c] + d[6 + c];
            const bool inside = v > 0.0 && v < 1.0;
            g.color[c] = clamp01(v);
            if (color_gates && !inside) (*color_gates)[i * 3 + c] = 0;
        }
        g.opacity_logit += d[9];
        // Rotations are not part of the residual; re-normalize only if the
        // unit invariant drifted so a zero update leaves the scene bit-exact.
        if (std::abs(g.rotation.norm() - 1.0) > 1e-6) {
            g.rotation = g.rotation.normalized();
        }
    }
    return out;
}

} // namespace gsr
