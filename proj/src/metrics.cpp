#include "freefix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "freefix/kernels.hpp"

namespace freefix {

double psnr(const AttributeImage& a, const AttributeImage& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    if (a.size() == 0) throw std::invalid_argument("psnr: empty image");
    const double mse = kernels::sum_sq_diff(a.data(), b.data(), a.size()) / double(a.size());
    if (mse < 1e-10) return kPsnrSentinel;
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const double* ssim_window() {
    static double w[kWin * kWin];
    static bool init = false;
    if (!init) {
        const double sigma = 1.5;
        double total = 0;
        for (int y = 0; y < kWin; ++y)
            for (int x = 0; x < kWin; ++x) {
                const double dx = x - kWin / 2, dy = y - kWin / 2;
                w[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
                total += w[y * kWin + x];
            }
        for (double& v : w) v /= total;
        init = true;
    }
    return w;
}

} // namespace

double ssim_with_gradient(const AttributeImage& a, const AttributeImage& b,
                          AttributeImage* grad_a) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    if (a.width() < kWin || a.height() < kWin)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    const double* win = ssim_window();
    const int nwx = a.width() - kWin + 1;
    const int nwy = a.height() - kWin + 1;
    const double count = double(nwx) * nwy * a.channels();

    if (grad_a) {
        *grad_a = AttributeImage(a.width(), a.height(), a.channels());
    }

    double total = 0;
    for (int c = 0; c < a.channels(); ++c)
        for (int wy = 0; wy < nwy; ++wy)
            for (int wx = 0; wx < nwx; ++wx) {
                double mx = 0, my = 0, rxx = 0, ryy = 0, rxy = 0;
                for (int j = 0; j < kWin; ++j)
                    for (int i = 0; i < kWin; ++i) {
                        const double g = win[j * kWin + i];
                        const double x = a.at(wx + i, wy + j, c);
                        const double y = b.at(wx + i, wy + j, c);
                        mx += g * x;
                        my += g * y;
                        rxx += g * x * x;
                        ryy += g * y * y;
                        rxy += g * x * y;
                    }
                const double vx = rxx - mx * mx;
                const double vy = ryy - my * my;
                const double cov = rxy - mx * my;
                const double a1 = 2 * mx * my + kC1, a2 = 2 * cov + kC2;
                const double b1 = mx * mx + my * my + kC1, b2 = vx + vy + kC2;
                const double d = b1 * b2;
                const double s = a1 * a2 / d;
                total += s;

                if (grad_a) {
                    const double ds_dmx = (2 * my * a2 - s * 2 * mx * b2) / d;
                    const double ds_dvx = -s * b1 / d;
                    const double ds_dcov = 2 * a1 / d;
                    for (int j = 0; j < kWin; ++j)
                        for (int i = 0; i < kWin; ++i) {
                            const double g = win[j * kWin + i];
                            const double x = a.at(wx + i, wy + j, c);
                            const double y = b.at(wx + i, wy + j, c);
                            const double dval = ds_dmx * g + ds_dvx * 2 * g * (x - mx) +
                                                ds_dcov * g * (y - my);
                            grad_a->at(wx + i, wy + j, c) += float(dval / count);
                        }
                }
            }
    return total / count;
}

double ssim(const AttributeImage& a, const AttributeImage& b) {
    return ssim_with_gradient(a, b, nullptr);
}

double MetricReport::mean_psnr() const {
    if (rows.empty()) return 0;
    double acc = 0;
    for (const auto& r : rows) acc += r.psnr;
    return acc / double(rows.size());
}

double MetricReport::median_psnr() const {
    if (rows.empty()) return 0;
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.psnr);
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double MetricReport::mean_ssim() const {
    if (rows.empty()) return 0;
    double acc = 0;
    for (const auto& r : rows) acc += r.ssim;
    return acc / double(rows.size());
}

std::string to_csv(const std::vector<MetricReport>& reports) {
    std::ostringstream os;
    os << "scene,variant,seed,view,psnr,ssim\n";
    os.precision(10);
    for (const auto& rep : reports)
        for (const auto& row : rep.rows)
            os << rep.scene << "," << rep.variant << "," << rep.seed << "," << row.label
               << "," << row.psnr << "," << row.ssim << "\n";
    return os.str();
}

std::string to_markdown(const std::vector<MetricReport>& reports) {
    std::ostringstream os;
    os.precision(6);
    os << "| scene | variant | seed | mean PSNR | mean SSIM |\n";
    os << "|---|---|---|---|---|\n";
    for (const auto& rep : reports)
        os << "| " << rep.scene << " | " << rep.variant << " | " << rep.seed << " | "
           << rep.mean_psnr() << " | " << rep.mean_ssim() << " |\n";
    return os.str();
}

} // namespace freefix
