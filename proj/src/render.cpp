#include "freefix/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace freefix {

bool ParamGradients::all_finite() const {
    for (const auto& v : mu)
        for (double x : v)
            if (!std::isfinite(x)) return false;
    for (const auto& v : q)
        for (double x : v)
            if (!std::isfinite(x)) return false;
    for (const auto& v : s)
        for (double x : v)
            if (!std::isfinite(x)) return false;
    for (double x : eta)
        if (!std::isfinite(x)) return false;
    for (const auto& v : rgb)
        for (double x : v)
            if (!std::isfinite(x)) return false;
    return true;
}

namespace {

// cutoff radius^2 in Mahalanobis units: exp(-0.5 r2) = kWeightCutoff
const double kMaxMahal2 = -2.0 * std::log(kWeightCutoff);

struct Sym2 {
    double a = 0, b = 0, c = 0; // [[a,b],[b,c]]
};

// B = Jc * S3 * Jc^T for symmetric 3x3 S3 and 2x3 Jc
Sym2 sandwich(const double jc[2][3], const Mat3& s3) {
    double tmp[2][3];
    for (int r = 0; r < 2; ++r)
        for (int k = 0; k < 3; ++k)
            tmp[r][k] = jc[r][0] * s3(0, k) + jc[r][1] * s3(1, k) + jc[r][2] * s3(2, k);
    Sym2 out;
    out.a = tmp[0][0] * jc[0][0] + tmp[0][1] * jc[0][1] + tmp[0][2] * jc[0][2];
    out.b = tmp[0][0] * jc[1][0] + tmp[0][1] * jc[1][1] + tmp[0][2] * jc[1][2];
    out.c = tmp[1][0] * jc[1][0] + tmp[1][1] * jc[1][1] + tmp[1][2] * jc[1][2];
    return out;
}

// derivative of the rotation matrix of a *unit* quaternion w.r.t. its
// components (before normalization projection)
Mat3 rotation_derivative(const Quat& q, int comp) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 d;
    switch (comp) {
        case 0: // d/dw
            d.m = {0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0};
            break;
        case 1: // d/dx
            d.m = {0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x};
            break;
        case 2: // d/dy
            d.m = {-4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y};
            break;
        default: // d/dz
            d.m = {-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0};
            break;
    }
    return d;
}

struct FragChain {
    double jc[2][3];       // d(2D mean)/d(mu_world)
    Sym2 dcov_mu[3];       // d(2D cov)/d(mu_world_k)
    Sym2 dcov_q[4];        // d(2D cov)/d(q_l), normalization-projected
    Sym2 dcov_s[3];        // d(2D cov)/d(s_k)
};

struct Projector {
    const CameraView& view;
    Mat3 w_rot;

    explicit Projector(const CameraView& v) : view(v), w_rot(v.rotation.to_matrix()) {}

    // returns false if culled
    bool project_one(const GaussianPrimitive& g, int index, SplatFragment& frag,
                     FragChain* chain) const {
        const Vec3 cam = w_rot * g.mu + view.translation;
        if (cam.z < view.near || cam.z > view.far) return false;
        const double x = cam.x, y = cam.y, z = cam.z;

        frag.gaussian_index = index;
        frag.depth = z;
        frag.mean_x = view.fx * x / z + view.cx;
        frag.mean_y = view.fy * y / z + view.cy;
        frag.alpha = std::min(g.eta, kAlphaMax);

        // projection Jacobian at the mean (camera space)
        const double jproj[2][3] = {{view.fx / z, 0, -view.fx * x / (z * z)},
                                    {0, view.fy / z, -view.fy * y / (z * z)}};
        double jc[2][3]; // d(pixel)/d(mu_world) = Jproj * W
        for (int r = 0; r < 2; ++r)
            for (int k = 0; k < 3; ++k)
                jc[r][k] = jproj[r][0] * w_rot(0, k) + jproj[r][1] * w_rot(1, k) +
                           jproj[r][2] * w_rot(2, k);

        // 3D covariance
        const Mat3 rot = g.q.to_matrix();
        Mat3 s2; // diag(s^2)
        s2.m = {g.s.x * g.s.x, 0, 0, 0, g.s.y * g.s.y, 0, 0, 0, g.s.z * g.s.z};
        const Mat3 sigma3 = rot * s2 * rot.transposed();

        const Sym2 cov0 = sandwich(jc, sigma3);
        frag.cov_a = cov0.a + kAntiAliasFloor;
        frag.cov_b = cov0.b;
        frag.cov_c = cov0.c + kAntiAliasFloor;

        const double det = frag.cov_a * frag.cov_c - frag.cov_b * frag.cov_b;
        if (det <= 0) return false; // cannot happen with the floor; belt and braces
        frag.inv_a = frag.cov_c / det;
        frag.inv_b = -frag.cov_b / det;
        frag.inv_c = frag.cov_a / det;

        // bounding box from the cutoff ellipse: extent_k = sqrt(r2 * cov_kk)
        const double ex = std::sqrt(kMaxMahal2 * frag.cov_a);
        const double ey = std::sqrt(kMaxMahal2 * frag.cov_c);
        frag.x0 = std::max(0, int(std::floor(frag.mean_x - ex)));
        frag.x1 = std::min(view.width, int(std::ceil(frag.mean_x + ex)) + 1);
        frag.y0 = std::max(0, int(std::floor(frag.mean_y - ey)));
        frag.y1 = std::min(view.height, int(std::ceil(frag.mean_y + ey)) + 1);
        if (frag.x0 >= frag.x1 || frag.y0 >= frag.y1) return false;

        if (chain) {
            for (int r = 0; r < 2; ++r)
                for (int k = 0; k < 3; ++k) chain->jc[r][k] = jc[r][k];

            // through the projection Jacobian: dcov/dmu_cam then chain by W
            const Mat3 lam = w_rot * sigma3 * w_rot.transposed();
            Sym2 dcov_cam[3];
            for (int m = 0; m < 3; ++m) {
                double dj[2][3] = {{0, 0, 0}, {0, 0, 0}};
                if (m == 0) {
                    dj[0][2] = -view.fx / (z * z);
                } else if (m == 1) {
                    dj[1][2] = -view.fy / (z * z);
                } else {
                    dj[0][0] = -view.fx / (z * z);
                    dj[0][2] = 2 * view.fx * x / (z * z * z);
                    dj[1][1] = -view.fy / (z * z);
                    dj[1][2] = 2 * view.fy * y / (z * z * z);
                }
                // P = dJ * Lam * J^T ; dcov = P + P^T
                double t[2][3];
                for (int r = 0; r < 2; ++r)
                    for (int k = 0; k < 3; ++k)
                        t[r][k] = dj[r][0] * lam(0, k) + dj[r][1] * lam(1, k) + dj[r][2] * lam(2, k);
                double p[2][2];
                for (int r = 0; r < 2; ++r)
                    for (int c = 0; c < 2; ++c)
                        p[r][c] = t[r][0] * jproj[c][0] + t[r][1] * jproj[c][1] + t[r][2] * jproj[c][2];
                dcov_cam[m].a = 2 * p[0][0];
                dcov_cam[m].b = p[0][1] + p[1][0];
                dcov_cam[m].c = 2 * p[1][1];
            }
            for (int k = 0; k < 3; ++k) {
                Sym2 d;
                for (int m = 0; m < 3; ++m) {
                    d.a += w_rot(m, k) * dcov_cam[m].a;
                    d.b += w_rot(m, k) * dcov_cam[m].b;
                    d.c += w_rot(m, k) * dcov_cam[m].c;
                }
                chain->dcov_mu[k] = d;
            }

            // through the 3D covariance: quaternion (with normalization
            // projection) and scales
            Sym2 dq_unit[4];
            for (int l = 0; l < 4; ++l) {
                const Mat3 dr = rotation_derivative(g.q, l);
                const Mat3 kmat = dr * s2 * rot.transposed();
                Mat3 dsigma;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) dsigma(i, j) = kmat(i, j) + kmat(j, i);
                dq_unit[l] = sandwich(jc, dsigma);
            }
            const double qv[4] = {g.q.w, g.q.x, g.q.y, g.q.z};
            for (int l = 0; l < 4; ++l) {
                Sym2 d;
                for (int m = 0; m < 4; ++m) {
                    const double p = (l == m ? 1.0 : 0.0) - qv[m] * qv[l];
                    d.a += p * dq_unit[m].a;
                    d.b += p * dq_unit[m].b;
                    d.c += p * dq_unit[m].c;
                }
                chain->dcov_q[l] = d;
            }

            const double sv[3] = {g.s.x, g.s.y, g.s.z};
            for (int k = 0; k < 3; ++k) {
                // dSigma3/ds_k = 2 s_k R_k R_k^T -> dcov = 2 s_k (Jc R_k)(Jc R_k)^T
                const double rk[3] = {rot(0, k), rot(1, k), rot(2, k)};
                double v[2];
                for (int r = 0; r < 2; ++r)
                    v[r] = jc[r][0] * rk[0] + jc[r][1] * rk[1] + jc[r][2] * rk[2];
                chain->dcov_s[k].a = 2 * sv[k] * v[0] * v[0];
                chain->dcov_s[k].b = 2 * sv[k] * v[0] * v[1];
                chain->dcov_s[k].c = 2 * sv[k] * v[1] * v[1];
            }
        }
        return true;
    }
};

std::vector<std::vector<int>> pixel_lists(const std::vector<SplatFragment>& frags,
                                          int width, int height) {
    std::vector<std::vector<int>> lists(std::size_t(width) * height);
    for (int fi = 0; fi < int(frags.size()); ++fi) {
        const auto& f = frags[fi];
        for (int y = f.y0; y < f.y1; ++y)
            for (int x = f.x0; x < f.x1; ++x)
                lists[std::size_t(y) * width + x].push_back(fi);
    }
    return lists;
}

inline double gauss_weight(const SplatFragment& f, double px, double py, double& m2) {
    const double dx = px - f.mean_x, dy = py - f.mean_y;
    m2 = dx * (f.inv_a * dx + f.inv_b * dy) + dy * (f.inv_b * dx + f.inv_c * dy);
    if (m2 > kMaxMahal2) return 0.0;
    return std::exp(-0.5 * m2);
}

} // namespace

std::vector<SplatFragment> project(const CameraView& view, const GaussianScene& scene) {
    view.validate();
    const Projector proj(view);
    std::vector<SplatFragment> frags;
    frags.reserve(scene.size());
    for (int i = 0; i < int(scene.size()); ++i) {
        SplatFragment f;
        if (proj.project_one(scene.primitives[i], i, f, nullptr)) frags.push_back(f);
    }
    std::sort(frags.begin(), frags.end(), [](const SplatFragment& a, const SplatFragment& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.gaussian_index < b.gaussian_index;
    });
    return frags;
}

AttributeImage render_attribute(const CameraView& view, const GaussianScene& scene,
                                const std::vector<double>& values, int channels) {
    if (channels < 1) throw std::invalid_argument("render_attribute: channels must be >= 1");
    if (values.size() != scene.size() * std::size_t(channels))
        throw std::invalid_argument("render_attribute: values size must be primitives * channels");

    const auto frags = project(view, scene);
    const auto lists = pixel_lists(frags, view.width, view.height);
    AttributeImage out(view.width, view.height, channels);
    std::vector<double> acc(channels);

    for (int y = 0; y < view.height; ++y)
        for (int x = 0; x < view.width; ++x) {
            const auto& list = lists[std::size_t(y) * view.width + x];
            if (list.empty()) continue;
            const double px = x + 0.5, py = y + 0.5;
            std::fill(acc.begin(), acc.end(), 0.0);
            double trans = 1.0;
            for (int fi : list) {
                const auto& f = frags[fi];
                double m2;
                const double g = gauss_weight(f, px, py, m2);
                if (g <= 0.0) continue;
                const double alpha = std::min(f.alpha * g, kAlphaMax);
                const double w = alpha * trans;
                const double* v = values.data() + std::size_t(f.gaussian_index) * channels;
                for (int c = 0; c < channels; ++c) acc[c] += w * v[c];
                trans *= 1.0 - alpha;
                if (trans < kTransmittanceMin) break;
            }
            for (int c = 0; c < channels; ++c) out.at(x, y, c) = float(acc[c]);
        }
    return out;
}

AttributeImage render_color(const CameraView& view, const GaussianScene& scene) {
    std::vector<double> values(scene.size() * 3);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        values[i * 3 + 0] = scene.primitives[i].rgb.x;
        values[i * 3 + 1] = scene.primitives[i].rgb.y;
        values[i * 3 + 2] = scene.primitives[i].rgb.z;
    }
    return render_attribute(view, scene, values, 3);
}

AttributeImage render_depth(const CameraView& view, const GaussianScene& scene) {
    const Mat3 w_rot = view.rotation.to_matrix();
    std::vector<double> values(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i)
        values[i] = (w_rot * scene.primitives[i].mu + view.translation).z;
    return render_attribute(view, scene, values, 1);
}

AttributeImage render_opacity(const CameraView& view, const GaussianScene& scene) {
    return render_attribute(view, scene, std::vector<double>(scene.size(), 1.0), 1);
}

double weighted_render_sum(const CameraView& view, const GaussianScene& scene,
                           const AttributeImage& upstream) {
    if (upstream.width() != view.width || upstream.height() != view.height ||
        upstream.channels() != 3)
        throw std::invalid_argument("weighted_render_sum: upstream shape mismatch");

    const auto frags = project(view, scene);
    const auto lists = pixel_lists(frags, view.width, view.height);
    double total = 0.0;
    for (int y = 0; y < view.height; ++y)
        for (int x = 0; x < view.width; ++x) {
            const auto& list = lists[std::size_t(y) * view.width + x];
            if (list.empty()) continue;
            const double px = x + 0.5, py = y + 0.5;
            double trans = 1.0;
            double acc[3] = {0, 0, 0};
            for (int fi : list) {
                const auto& f = frags[fi];
                double m2;
                const double g = gauss_weight(f, px, py, m2);
                if (g <= 0.0) continue;
                const double alpha = std::min(f.alpha * g, kAlphaMax);
                const double w = alpha * trans;
                const auto& rgb = scene.primitives[f.gaussian_index].rgb;
                acc[0] += w * rgb.x;
                acc[1] += w * rgb.y;
                acc[2] += w * rgb.z;
                trans *= 1.0 - alpha;
                if (trans < kTransmittanceMin) break;
            }
            total += acc[0] * upstream.at(x, y, 0) + acc[1] * upstream.at(x, y, 1) +
                     acc[2] * upstream.at(x, y, 2);
        }
    return total;
}

namespace {

// shared per-pixel fragment state for the gradient passes
struct PixelFrag {
    int fi;
    double alpha;
    double weight;   // alpha * T_before
    double gweight;  // Gaussian falloff g
    double trans_before;
    bool clamped;
    double ad_x, ad_y; // e = Sigma2^{-1} (p - mean)
};

// collects active fragments at a pixel; returns count
int gather_pixel(const std::vector<SplatFragment>& frags, const std::vector<int>& list,
                 double px, double py, const GaussianScene& scene,
                 std::vector<PixelFrag>& out) {
    out.clear();
    double trans = 1.0;
    for (int fi : list) {
        const auto& f = frags[fi];
        double m2;
        const double g = gauss_weight(f, px, py, m2);
        if (g <= 0.0) continue;
        const double raw = std::min(f.alpha, kAlphaMax) * g;
        PixelFrag pf;
        pf.fi = fi;
        pf.clamped = raw > kAlphaMax;
        pf.alpha = pf.clamped ? kAlphaMax : raw;
        pf.trans_before = trans;
        pf.weight = pf.alpha * trans;
        pf.gweight = g;
        const double dx = px - f.mean_x, dy = py - f.mean_y;
        pf.ad_x = f.inv_a * dx + f.inv_b * dy;
        pf.ad_y = f.inv_b * dx + f.inv_c * dy;
        out.push_back(pf);
        trans *= 1.0 - pf.alpha;
        (void)scene;
        if (trans < kTransmittanceMin) break;
    }
    return int(out.size());
}

// d(alpha)/d(theta) for masked geometry params of one fragment at one pixel.
// out must hold up to 10 doubles (mu 3, q 4, s 3); returns the slot count
// written in mask order.
int alpha_partials(const PixelFrag& pf, const FragChain& ch, const ParamMask& mask,
                   double* out) {
    const double ex = pf.ad_x, ey = pf.ad_y;
    int n = 0;
    auto quad = [&](const Sym2& b) {
        return 0.5 * (ex * (b.a * ex + b.b * ey) + ey * (b.b * ex + b.c * ey));
    };
    if (mask.mu)
        for (int k = 0; k < 3; ++k)
            out[n++] = pf.alpha * (ex * ch.jc[0][k] + ey * ch.jc[1][k] + quad(ch.dcov_mu[k]));
    if (mask.q)
        for (int l = 0; l < 4; ++l) out[n++] = pf.alpha * quad(ch.dcov_q[l]);
    if (mask.s)
        for (int k = 0; k < 3; ++k) out[n++] = pf.alpha * quad(ch.dcov_s[k]);
    return n;
}

struct ProjectedWithChains {
    std::vector<SplatFragment> frags;
    std::vector<FragChain> chains;
};

ProjectedWithChains project_with_chains(const CameraView& view, const GaussianScene& scene) {
    view.validate();
    const Projector proj(view);
    ProjectedWithChains out;
    std::vector<std::pair<SplatFragment, FragChain>> items;
    for (int i = 0; i < int(scene.size()); ++i) {
        SplatFragment f;
        FragChain c;
        if (proj.project_one(scene.primitives[i], i, f, &c)) items.emplace_back(f, c);
    }
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.first.depth != b.first.depth) return a.first.depth < b.first.depth;
        return a.first.gaussian_index < b.first.gaussian_index;
    });
    out.frags.reserve(items.size());
    out.chains.reserve(items.size());
    for (auto& it : items) {
        out.frags.push_back(it.first);
        out.chains.push_back(it.second);
    }
    return out;
}

} // namespace

ParamGradients backprop(const CameraView& view, const GaussianScene& scene,
                        const AttributeImage& upstream) {
    if (upstream.width() != view.width || upstream.height() != view.height ||
        upstream.channels() != 3)
        throw std::invalid_argument("backprop: upstream shape mismatch");

    const auto pw = project_with_chains(view, scene);
    const auto lists = pixel_lists(pw.frags, view.width, view.height);
    ParamGradients grads(scene.size());

    const ParamMask full = ParamMask::full();
    std::vector<PixelFrag> pixel;
    pixel.reserve(64);

    for (int y = 0; y < view.height; ++y)
        for (int x = 0; x < view.width; ++x) {
            const auto& list = lists[std::size_t(y) * view.width + x];
            if (list.empty()) continue;
            const double px = x + 0.5, py = y + 0.5;
            const int n = gather_pixel(pw.frags, list, px, py, scene, pixel);
            if (n == 0) continue;
            const double u[3] = {upstream.at(x, y, 0), upstream.at(x, y, 1),
                                 upstream.at(x, y, 2)};
            if (u[0] == 0 && u[1] == 0 && u[2] == 0) continue;

            // suffix[c] = sum over later fragments of w_j v_jc
            double suffix[3] = {0, 0, 0};
            for (int i = 0; i < n; ++i) {
                const auto& rgb = scene.primitives[pw.frags[pixel[i].fi].gaussian_index].rgb;
                suffix[0] += pixel[i].weight * rgb.x;
                suffix[1] += pixel[i].weight * rgb.y;
                suffix[2] += pixel[i].weight * rgb.z;
            }

            for (int i = 0; i < n; ++i) {
                const PixelFrag& pf = pixel[i];
                const int gi = pw.frags[pf.fi].gaussian_index;
                const auto& rgb = scene.primitives[gi].rgb;
                const double v[3] = {rgb.x, rgb.y, rgb.z};
                suffix[0] -= pf.weight * v[0];
                suffix[1] -= pf.weight * v[1];
                suffix[2] -= pf.weight * v[2];

                // rgb gradient
                for (int c = 0; c < 3; ++c) grads.rgb[gi][c] += pf.weight * u[c];

                // d(out_c)/d(alpha_i) = T_i v_c - suffix_c / (1 - alpha_i)
                double dalpha = 0;
                for (int c = 0; c < 3; ++c)
                    dalpha += u[c] * (pf.trans_before * v[c] - suffix[c] / (1.0 - pf.alpha));

                if (pf.clamped) continue; // alpha pinned at the clamp

                // alpha = min(eta, kAlphaMax) * g
                if (scene.primitives[gi].eta < kAlphaMax)
                    grads.eta[gi] += dalpha * pf.gweight;

                double partials[10];
                const int np = alpha_partials(pf, pw.chains[pf.fi], full, partials);
                int idx = 0;
                for (int k = 0; k < 3; ++k) grads.mu[gi][k] += dalpha * partials[idx++];
                for (int l = 0; l < 4; ++l) grads.q[gi][l] += dalpha * partials[idx++];
                for (int k = 0; k < 3; ++k) grads.s[gi][k] += dalpha * partials[idx++];
                (void)np;
            }
        }
    return grads;
}

std::vector<double> per_gaussian_squared_jacobian(const CameraView& view,
                                                  const GaussianScene& scene,
                                                  const ParamMask& mask) {
    if (!mask.any())
        throw std::invalid_argument("per_gaussian_squared_jacobian: empty parameter mask");

    const auto pw = project_with_chains(view, scene);
    const auto lists = pixel_lists(pw.frags, view.width, view.height);
    std::vector<double> fisher(scene.size(), 0.0);

    std::vector<PixelFrag> pixel;
    pixel.reserve(64);

    for (int y = 0; y < view.height; ++y)
        for (int x = 0; x < view.width; ++x) {
            const auto& list = lists[std::size_t(y) * view.width + x];
            if (list.empty()) continue;
            const double px = x + 0.5, py = y + 0.5;
            const int n = gather_pixel(pw.frags, list, px, py, scene, pixel);
            if (n == 0) continue;

            double suffix[3] = {0, 0, 0};
            for (int i = 0; i < n; ++i) {
                const auto& rgb = scene.primitives[pw.frags[pixel[i].fi].gaussian_index].rgb;
                suffix[0] += pixel[i].weight * rgb.x;
                suffix[1] += pixel[i].weight * rgb.y;
                suffix[2] += pixel[i].weight * rgb.z;
            }

            for (int i = 0; i < n; ++i) {
                const PixelFrag& pf = pixel[i];
                const int gi = pw.frags[pf.fi].gaussian_index;
                const auto& rgb = scene.primitives[gi].rgb;
                const double v[3] = {rgb.x, rgb.y, rgb.z};
                suffix[0] -= pf.weight * v[0];
                suffix[1] -= pf.weight * v[1];
                suffix[2] -= pf.weight * v[2];

                if (mask.rgb) fisher[gi] += 3.0 * pf.weight * pf.weight;

                if (pf.clamped) continue;

                // sum over channels of (d out_c / d alpha_i)^2
                double sum_a2 = 0;
                for (int c = 0; c < 3; ++c) {
                    const double ac = pf.trans_before * v[c] - suffix[c] / (1.0 - pf.alpha);
                    sum_a2 += ac * ac;
                }
                if (sum_a2 == 0) continue;

                if (mask.eta && scene.primitives[gi].eta < kAlphaMax)
                    fisher[gi] += sum_a2 * pf.gweight * pf.gweight;

                double partials[10];
                ParamMask geo = mask;
                geo.eta = geo.rgb = false;
                if (geo.any()) {
                    const int np = alpha_partials(pf, pw.chains[pf.fi], geo, partials);
                    for (int k = 0; k < np; ++k) fisher[gi] += sum_a2 * partials[k] * partials[k];
                }
            }
        }
    return fisher;
}

} // namespace freefix
