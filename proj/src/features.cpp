#include "gsr/features.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "gsr/io.hpp"

namespace gsr {
namespace {

// Symmetric reflection: ... 2 1 0 | 0 1 2 ... | n-1 n-2 ...
inline int reflect(int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return i;
}

// Keeps the gradient-magnitude channels differentiable at zero response.
constexpr double kMagEps = 1e-12;

constexpr double kSobel[3] = {1.0, 2.0, 1.0};   // smoothing tap
constexpr double kDeriv[3] = {-1.0, 0.0, 1.0};  // derivative tap
constexpr double kSobelNorm = 1.0 / 8.0;
constexpr double kBinom5[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

void sobel_pair(const Image& src, int c, int y, int x, double& gx, double& gy) {
    gx = 0.0;
    gy = 0.0;
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
            const double v = src.at(reflect(y + dy, src.height), reflect(x + dx, src.width), c);
            gx += kDeriv[dx + 1] * kSobel[dy + 1] * v;
            gy += kSobel[dx + 1] * kDeriv[dy + 1] * v;
        }
    }
    gx *= kSobelNorm;
    gy *= kSobelNorm;
}

struct LoadedConv {
    struct Layer {
        int in_ch = 0, out_ch = 0, k = 0;
        std::vector<double> weight; // out*in*k*k
        std::vector<double> bias;   // out
    };
    std::vector<Layer> layers;
    int out_channels = 0;
};

LoadedConv parse_conv(const TensorFile& tf, const std::string& path) {
    LoadedConv conv;
    for (int li = 1;; ++li) {
        const std::string wname = "conv" + std::to_string(li) + "_weight";
        const std::string bname = "conv" + std::to_string(li) + "_bias";
        if (!tf.has(wname)) break;
        const TensorBlock& wt = tf.find(wname);
        const TensorBlock& bt = tf.find(bname);
        if (wt.shape.size() != 4 || wt.shape[2] != wt.shape[3] || wt.shape[2] % 2 == 0) {
            throw IoError(path + ": " + wname + " must be (out, in, k, k) with odd k");
        }
        LoadedConv::Layer layer;
        layer.out_ch = static_cast<int>(wt.shape[0]);
        layer.in_ch = static_cast<int>(wt.shape[1]);
        layer.k = static_cast<int>(wt.shape[2]);
        if (bt.shape.size() != 1 || static_cast<int>(bt.shape[0]) != layer.out_ch) {
            throw IoError(path + ": " + bname + " shape mismatch");
        }
        layer.weight.assign(wt.data.begin(), wt.data.end());
        layer.bias.assign(bt.data.begin(), bt.data.end());
        conv.layers.push_back(std::move(layer));
    }
    if (conv.layers.empty()) throw IoError(path + ": no conv layers found");
    if (conv.layers.front().in_ch != 3) {
        throw IoError(path + ": first conv layer must take 3 input channels");
    }
    for (std::size_t i = 1; i < conv.layers.size(); ++i) {
        if (conv.layers[i].in_ch != conv.layers[i - 1].out_ch) {
            throw IoError(path + ": conv layer channel mismatch");
        }
    }
    conv.out_channels = conv.layers.back().out_ch;
    if (conv.out_channels < 3) throw IoError(path + ": output channel count must be >= 3");
    return conv;
}

// Loaded weights are cached per path; extractors are frozen so a stale
// entry can only arise by rewriting the file mid-process.
std::shared_ptr<const LoadedConv> get_conv(const std::string& path) {
    static std::mutex mu;
    static std::map<std::string, std::shared_ptr<const LoadedConv>> cache;
    std::lock_guard<std::mutex> lk(mu);
    auto it = cache.find(path);
    if (it != cache.end()) return it->second;
    auto conv = std::make_shared<LoadedConv>(parse_conv(load_tensor_file(path), path));
    cache[path] = conv;
    return conv;
}

Image conv_forward(const Image& src, const LoadedConv::Layer& layer, bool relu) {
    Image dst(src.width, src.height, layer.out_ch);
    const int r = layer.k / 2;
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            for (int oc = 0; oc < layer.out_ch; ++oc) {
                double acc = layer.bias[oc];
                const double* w =
                    layer.weight.data() +
                    static_cast<std::size_t>(oc) * layer.in_ch * layer.k * layer.k;
                for (int ic = 0; ic < layer.in_ch; ++ic) {
                    for (int dy = -r; dy <= r; ++dy) {
                        for (int dx = -r; dx <= r; ++dx) {
                            acc += w[(static_cast<std::size_t>(ic) * layer.k + (dy + r)) *
                                         layer.k +
                                     (dx + r)] *
                                   src.at(reflect(y + dy, src.height),
                                          reflect(x + dx, src.width), ic);
                        }
                    }
                }
                dst.at(y, x, oc) = relu ? std::max(0.0, acc) : acc;
            }
        }
    }
    return dst;
}

Image loaded_forward(const Image& image, const LoadedConv& conv) {
    Image cur = image;
    for (std::size_t i = 0; i < conv.layers.size(); ++i) {
        const bool relu = i + 1 < conv.layers.size();
        cur = conv_forward(cur, conv.layers[i], relu);
    }
    return cur;
}

} // namespace

namespace detail {

void binomial_blur5(const Image& src, Image& dst) {
    const int w = src.width, h = src.height, ch = src.channels;
    Image tmp(w, h, ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int d = -2; d <= 2; ++d) acc += kBinom5[d + 2] * src.at(y, reflect(x + d, w), c);
                tmp.at(y, x, c) = acc;
            }
    dst = Image(w, h, ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int d = -2; d <= 2; ++d) acc += kBinom5[d + 2] * tmp.at(reflect(y + d, h), x, c);
                dst.at(y, x, c) = acc;
            }
}

} // namespace detail

namespace {

// Adjoint of binomial_blur5 (scatter along the same reflected taps).
void binomial_blur5_adjoint(const Image& upstream, Image& dst) {
    const int w = upstream.width, h = upstream.height, ch = upstream.channels;
    Image tmp(w, h, ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                const double g = upstream.at(y, x, c);
                if (g == 0.0) continue;
                for (int d = -2; d <= 2; ++d)
                    tmp.at(reflect(y + d, h), x, c) += kBinom5[d + 2] * g;
            }
    dst = Image(w, h, ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                const double g = tmp.at(y, x, c);
                if (g == 0.0) continue;
                for (int d = -2; d <= 2; ++d)
                    dst.at(y, reflect(x + d, w), c) += kBinom5[d + 2] * g;
            }
}

} // namespace

FeatureExtractorSpec FeatureExtractorSpec::loaded(const std::string& path) {
    FeatureExtractorSpec spec;
    spec.mode = Mode::Loaded;
    spec.weights_path = path;
    get_conv(path); // validate eagerly
    return spec;
}

int FeatureExtractorSpec::channel_count() const {
    if (mode == Mode::Handcrafted) return kHandcraftedFeatureDim;
    return get_conv(weights_path)->out_channels;
}

Image extract_features(const Image& image, const FeatureExtractorSpec& spec) {
    if (image.channels != 3) throw UsageError("extract_features expects an RGB image");

    if (spec.mode == FeatureExtractorSpec::Mode::Loaded) {
        return loaded_forward(image, *get_conv(spec.weights_path));
    }

    const int w = image.width, h = image.height;
    Image out(w, h, kHandcraftedFeatureDim);

    Image blur1, blur2;
    detail::binomial_blur5(image, blur1);
    detail::binomial_blur5(blur1, blur2);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = image.at(y, x, c);
                double gx, gy;
                sobel_pair(image, c, y, x, gx, gy);
                out.at(y, x, 3 + c) =
                    std::sqrt(gx * gx + gy * gy + kMagEps) - std::sqrt(kMagEps);
                out.at(y, x, 6 + c) = blur1.at(y, x, c);
                out.at(y, x, 9 + c) = blur2.at(y, x, c);
            }
        }
    }
    return out;
}

Image extract_features_backward(const Image& image, const Image& upstream,
                                const FeatureExtractorSpec& spec) {
    if (spec.mode == FeatureExtractorSpec::Mode::Loaded) {
        const LoadedConv& conv = *get_conv(spec.weights_path);
        // Recompute intermediate activations, then scatter back layer by layer.
        std::vector<Image> acts;
        acts.push_back(image);
        for (std::size_t i = 0; i < conv.layers.size(); ++i) {
            const bool relu = i + 1 < conv.layers.size();
            acts.push_back(conv_forward(acts.back(), conv.layers[i], relu));
        }
        Image grad = upstream;
        for (std::size_t li = conv.layers.size(); li-- > 0;) {
            const auto& layer = conv.layers[li];
            const Image& in = acts[li];
            const Image& out = acts[li + 1];
            const bool relu = li + 1 < conv.layers.size();
            Image gin(in.width, in.height, layer.in_ch);
            const int r = layer.k / 2;
            for (int y = 0; y < in.height; ++y)
                for (int x = 0; x < in.width; ++x)
                    for (int oc = 0; oc < layer.out_ch; ++oc) {
                        double g = grad.at(y, x, oc);
                        if (relu && out.at(y, x, oc) <= 0.0) g = 0.0;
                        if (g == 0.0) continue;
                        const double* wts =
                            layer.weight.data() +
                            static_cast<std::size_t>(oc) * layer.in_ch * layer.k * layer.k;
                        for (int ic = 0; ic < layer.in_ch; ++ic)
                            for (int dy = -r; dy <= r; ++dy)
                                for (int dx = -r; dx <= r; ++dx)
                                    gin.at(reflect(y + dy, in.height), reflect(x + dx, in.width),
                                           ic) +=
                                        g * wts[(static_cast<std::size_t>(ic) * layer.k +
                                                 (dy + r)) *
                                                    layer.k +
                                                (dx + r)];
                    }
            grad = std::move(gin);
        }
        return grad;
    }

    if (upstream.width != image.width || upstream.height != image.height ||
        upstream.channels != kHandcraftedFeatureDim) {
        throw NumericError("extract_features_backward: upstream shape mismatch");
    }
    const int w = image.width, h = image.height;
    Image grad(w, h, 3);

    // Raw channels.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) grad.at(y, x, c) += upstream.at(y, x, c);

    // Gradient magnitude channels.
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double g = upstream.at(y, x, 3 + c);
                if (g == 0.0) continue;
                double gx, gy;
                sobel_pair(image, c, y, x, gx, gy);
                const double mag = std::sqrt(gx * gx + gy * gy + kMagEps);
                const double dgx = g * gx / mag * kSobelNorm;
                const double dgy = g * gy / mag * kSobelNorm;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        grad.at(reflect(y + dy, h), reflect(x + dx, w), c) +=
                            dgx * kDeriv[dx + 1] * kSobel[dy + 1] +
                            dgy * kSobel[dx + 1] * kDeriv[dy + 1];
            }
        }
    }

    // Blur channels: one and two applications of the adjoint.
    Image up1(w, h, 3), up2(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                up1.at(y, x, c) = upstream.at(y, x, 6 + c);
                up2.at(y, x, c) = upstream.at(y, x, 9 + c);
            }
    Image b1adj, b2adj_half, b2adj;
    binomial_blur5_adjoint(up1, b1adj);
    binomial_blur5_adjoint(up2, b2adj_half);
    binomial_blur5_adjoint(b2adj_half, b2adj);
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        grad.data[i] += b1adj.data[i] + b2adj.data[i];
    }
    return grad;
}

Image feature_difference(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw NumericError("feature_difference: shape mismatch");
    Image out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

} // namespace gsr
