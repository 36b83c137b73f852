#include "gsr/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "gsr/threading.hpp"

namespace gsr {
namespace {

constexpr int kWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> luminance(const Image& img) {
    std::vector<double> y(img.pixel_count());
    if (img.channels == 1) {
        y.assign(img.data.begin(), img.data.end());
        return y;
    }
    for (std::size_t p = 0; p < y.size(); ++p) {
        // ITU BT.601 weights.
        y[p] = 0.299 * img.data[p * img.channels + 0] +
               0.587 * img.data[p * img.channels + 1] +
               0.114 * img.data[p * img.channels + 2];
    }
    return y;
}

const std::vector<double>& ssim_kernel() {
    static const std::vector<double> k = [] {
        std::vector<double> v(kWindow);
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            const double d = i - (kWindow - 1) / 2.0;
            v[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += v[i];
        }
        for (auto& x : v) x /= sum;
        return v;
    }();
    return k;
}

} // namespace

double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw NumericError("mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw NumericError("ssim: shape mismatch");
    if (a.width < kWindow || a.height < kWindow) {
        throw NumericError("ssim: image smaller than the 11x11 window");
    }
    const auto ya = luminance(a);
    const auto yb = luminance(b);
    const auto& k = ssim_kernel();
    const int w = a.width, h = a.height;
    const int r = kWindow / 2;

    // Separable windowed moments, valid region only.
    const int vw = w - 2 * r, vh = h - 2 * r;
    auto hfilter = [&](const std::vector<double>& src, std::vector<double>& dst) {
        dst.assign(static_cast<std::size_t>(vw) * h, 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < vw; ++x) {
                double acc = 0.0;
                for (int i = 0; i < kWindow; ++i)
                    acc += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
                dst[static_cast<std::size_t>(y) * vw + x] = acc;
            }
    };
    auto vfilter = [&](const std::vector<double>& src, std::vector<double>& dst) {
        dst.assign(static_cast<std::size_t>(vw) * vh, 0.0);
        for (int y = 0; y < vh; ++y)
            for (int x = 0; x < vw; ++x) {
                double acc = 0.0;
                for (int i = 0; i < kWindow; ++i)
                    acc += k[i] * src[static_cast<std::size_t>(y + i) * vw + x];
                dst[static_cast<std::size_t>(y) * vw + x] = acc;
            }
    };
    auto windowed = [&](const std::vector<double>& src) {
        std::vector<double> tmp, out;
        hfilter(src, tmp);
        vfilter(tmp, out);
        return out;
    };

    std::vector<double> aa(ya.size()), bb(ya.size()), ab(ya.size());
    for (std::size_t i = 0; i < ya.size(); ++i) {
        aa[i] = ya[i] * ya[i];
        bb[i] = yb[i] * yb[i];
        ab[i] = ya[i] * yb[i];
    }
    const auto mu_a = windowed(ya);
    const auto mu_b = windowed(yb);
    const auto m_aa = windowed(aa);
    const auto m_bb = windowed(bb);
    const auto m_ab = windowed(ab);

    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        acc += ((2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cov + kC2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2));
    }
    return acc / static_cast<double>(mu_a.size());
}

double feature_distance(const Image& a, const Image& b, const FeatureExtractorSpec& spec) {
    const Image fa = extract_features(a, spec);
    const Image fb = extract_features(b, spec);
    double acc = 0.0;
    for (std::size_t i = 0; i < fa.data.size(); ++i) {
        const double d = fa.data[i] - fb.data[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(fa.data.size()));
}

MetricReport evaluate(const GaussianScene& scene,
                      const std::vector<std::pair<Image, Camera>>& eval_views,
                      const RenderOptions& opts, const FeatureExtractorSpec& feat_spec) {
    if (eval_views.empty()) throw UsageError("evaluate: needs at least one view");
    MetricReport report;
    report.per_view.resize(eval_views.size());
    parallel_ranges(eval_views.size(), 1, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto& [gt, cam] = eval_views[i];
            const RenderOutput ro = render(scene, cam, opts);
            MetricReport::Entry entry;
            entry.view = "view_" + std::to_string(i);
            entry.psnr = psnr(gt, ro.image);
            entry.ssim = ssim(gt, ro.image);
            entry.featdist = feature_distance(gt, ro.image, feat_spec);
            report.per_view[i] = entry;
        }
    });
    for (const auto& entry : report.per_view) {
        report.mean_psnr += entry.psnr;
        report.mean_ssim += entry.ssim;
        report.mean_featdist += entry.featdist;
    }
    const double n = static_cast<double>(report.per_view.size());
    report.mean_psnr /= n;
    report.mean_ssim /= n;
    report.mean_featdist /= n;
    return report;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["mean"] = {{"psnr", mean_psnr}, {"ssim", mean_ssim}, {"featdist", mean_featdist}};
    nlohmann::json views = nlohmann::json::array();
    for (const auto& e : per_view) {
        views.push_back(
            {{"view", e.view}, {"psnr", e.psnr}, {"ssim", e.ssim}, {"featdist", e.featdist}});
    }
    j["per_view"] = views;
    return j.dump(2) + "\n";
}

std::string MetricReport::to_table() const {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof(line), "%-12s %10s %10s %10s\n", "view", "psnr", "ssim",
                  "featdist");
    os << line;
    for (const auto& e : per_view) {
        std::snprintf(line, sizeof(line), "%-12s %10.4f %10.6f %10.6f\n", e.view.c_str(),
                      e.psnr, e.ssim, e.featdist);
        os << line;
    }
    std::snprintf(line, sizeof(line), "%-12s %10.4f %10.6f %10.6f\n", "mean", mean_psnr,
                  mean_ssim, mean_featdist);
    os << line;
    return os.str();
}

} // namespace gsr
