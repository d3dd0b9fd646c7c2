#include "colodiff/codec.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "colodiff/error.hpp"
#include "colodiff/io.hpp"

namespace colodiff::codec {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Flatten the q x q patch at (gi, gj) of one frame, channel-major, into dst.
void gather_patch(const float* frame, int64_t H, int64_t W, int q, int64_t gi, int64_t gj,
                  double* dst) {
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t oi = 0; oi < q; ++oi)
            for (int64_t oj = 0; oj < q; ++oj)
                dst[(c * q + oi) * q + oj] =
                    double(frame[(c * H + gi * q + oi) * W + gj * q + oj]);
}

}  // namespace

CodecParams fit_codec(const std::vector<Tensor<float>>& clips, int q, int c_lat) {
    if (clips.empty()) throw_param("fit_codec needs a nonempty clip set");
    if (q < 1) throw_param("fit_codec patch side must be >= 1");
    const int64_t pd = int64_t(3) * q * q;
    if (c_lat < 1 || c_lat > pd) throw_param("c_lat outside [1, patch_dim]");

    // Count patches, then fill one big matrix for the covariance.
    int64_t n_patches = 0;
    for (const auto& clip : clips) {
        if (clip.rank() != 4 || clip.extent(1) != 3)
            throw_dim("fit_codec expects clips [F,3,H,W]");
        const int64_t H = clip.extent(2), W = clip.extent(3);
        if (H % q != 0 || W % q != 0) throw_param("frame extents must be divisible by q");
        n_patches += clip.extent(0) * (H / q) * (W / q);
    }
    if (n_patches < 2) throw_param("fit_codec needs at least 2 patches");

    Eigen::MatrixXd X(n_patches, pd);
    int64_t row = 0;
    std::vector<double> buf(static_cast<size_t>(pd));
    for (const auto& clip : clips) {
        const int64_t F = clip.extent(0), H = clip.extent(2), W = clip.extent(3);
        const int64_t gh = H / q, gw = W / q;
        for (int64_t f = 0; f < F; ++f) {
            const float* frame = clip.data.data() + f * 3 * H * W;
            for (int64_t gi = 0; gi < gh; ++gi)
                for (int64_t gj = 0; gj < gw; ++gj) {
                    gather_patch(frame, H, W, q, gi, gj, buf.data());
                    for (int64_t k = 0; k < pd; ++k) X(row, k) = buf[size_t(k)];
                    ++row;
                }
        }
    }

    const Eigen::RowVectorXd mu = X.colwise().mean();
    X.rowwise() -= mu;
    const Eigen::MatrixXd cov = (X.adjoint() * X) / double(n_patches - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw_numeric("patch covariance eigensolve failed");

    CodecParams cp;
    cp.q = q;
    cp.c_lat = c_lat;
    cp.mean = Tensor<float>({pd});
    for (int64_t k = 0; k < pd; ++k) cp.mean[k] = static_cast<float>(mu(k));
    cp.basis = Tensor<float>({c_lat, pd});
    cp.eigenvalues.resize(static_cast<size_t>(c_lat));
    for (int k = 0; k < c_lat; ++k) {
        // Eigenvalues come back ascending; take the top ones in descending
        // order and floor them so degenerate directions stay usable.
        const int64_t src = pd - 1 - k;
        cp.eigenvalues[size_t(k)] = std::max(es.eigenvalues()(src), 1e-8);
        Eigen::VectorXd v = es.eigenvectors().col(src);
        // Canonical sign: largest-magnitude component positive.
        int64_t imax = 0;
        for (int64_t i = 1; i < pd; ++i)
            if (std::abs(v(i)) > std::abs(v(imax))) imax = i;
        if (v(imax) < 0) v = -v;
        for (int64_t i = 0; i < pd; ++i)
            cp.basis[int64_t(k) * pd + i] = static_cast<float>(v(i));
    }

    // Latent normalization stats over the fit set. The projection of
    // centered data has mean 0 by construction; the variance equals the
    // eigenvalue, but measure it from data so the stats and basis can never
    // drift apart.
    Eigen::VectorXd lsum = Eigen::VectorXd::Zero(c_lat);
    Eigen::VectorXd lsq = Eigen::VectorXd::Zero(c_lat);
    Eigen::MatrixXd B(c_lat, pd);
    for (int k = 0; k < c_lat; ++k)
        for (int64_t i = 0; i < pd; ++i) B(k, i) = double(cp.basis[int64_t(k) * pd + i]);
    for (int64_t r = 0; r < n_patches; ++r) {
        const Eigen::VectorXd y = B * X.row(r).transpose();
        lsum += y;
        lsq += y.cwiseProduct(y);
    }
    cp.lat_mean = Tensor<float>({c_lat});
    cp.lat_std = Tensor<float>({c_lat});
    for (int k = 0; k < c_lat; ++k) {
        const double m = lsum(k) / double(n_patches);
        const double var = std::max(lsq(k) / double(n_patches) - m * m, 1e-8);
        cp.lat_mean[k] = static_cast<float>(m);
        cp.lat_std[k] = static_cast<float>(std::sqrt(var));
    }
    return cp;
}

Tensor<float> encode(const CodecParams& cp, const Tensor<float>& video) {
    if (video.rank() != 4 || video.extent(1) != 3)
        throw_dim("encode expects [F,3,H,W], got ", shape_str(video.shape));
    const int64_t F = video.extent(0), H = video.extent(2), W = video.extent(3);
    const int q = cp.q;
    if (H % q != 0 || W % q != 0) throw_param("encode extents not divisible by q");
    const int64_t h = H / q, w = W / q, pd = cp.patch_dim();
    Tensor<float> out({F, cp.c_lat, h, w});
    std::vector<double> buf(static_cast<size_t>(pd));
    for (int64_t f = 0; f < F; ++f) {
        const float* frame = video.data.data() + f * 3 * H * W;
        for (int64_t gi = 0; gi < h; ++gi)
            for (int64_t gj = 0; gj < w; ++gj) {
                gather_patch(frame, H, W, q, gi, gj, buf.data());
                for (int64_t k = 0; k < pd; ++k) buf[size_t(k)] -= double(cp.mean[k]);
                for (int64_t c = 0; c < cp.c_lat; ++c) {
                    double y = 0.0;
                    const float* b = cp.basis.data.data() + c * pd;
                    for (int64_t k = 0; k < pd; ++k) y += double(b[k]) * buf[size_t(k)];
                    out[((f * cp.c_lat + c) * h + gi) * w + gj] = static_cast<float>(
                        (y - double(cp.lat_mean[c])) / double(cp.lat_std[c]));
                }
            }
    }
    return out;
}

Tensor<float> decode(const CodecParams& cp, const Tensor<float>& latent) {
    if (latent.rank() != 4 || latent.extent(1) != cp.c_lat)
        throw_dim("decode expects [F,c_lat,h,w], got ", shape_str(latent.shape));
    const int64_t F = latent.extent(0), h = latent.extent(2), w = latent.extent(3);
    const int q = cp.q;
    const int64_t H = h * q, W = w * q, pd = cp.patch_dim();
    Tensor<float> out({F, 3, H, W});
    std::vector<double> buf(static_cast<size_t>(pd));
    for (int64_t f = 0; f < F; ++f) {
        float* frame = out.data.data() + f * 3 * H * W;
        for (int64_t gi = 0; gi < h; ++gi)
            for (int64_t gj = 0; gj < w; ++gj) {
                for (int64_t k = 0; k < pd; ++k) buf[size_t(k)] = double(cp.mean[k]);
                for (int64_t c = 0; c < cp.c_lat; ++c) {
                    const double y =
                        double(latent[((f * cp.c_lat + c) * h + gi) * w + gj]) *
                            double(cp.lat_std[c]) +
                        double(cp.lat_mean[c]);
                    const float* b = cp.basis.data.data() + c * pd;
                    for (int64_t k = 0; k < pd; ++k) buf[size_t(k)] += y * double(b[k]);
                }
                for (int64_t c = 0; c < 3; ++c)
                    for (int64_t oi = 0; oi < q; ++oi)
                        for (int64_t oj = 0; oj < q; ++oj)
                            frame[(c * H + gi * q + oi) * W + gj * q + oj] =
                                static_cast<float>(std::clamp(
                                    buf[size_t((c * q + oi) * q + oj)], 0.0, 1.0));
            }
    }
    return out;
}

void save_codec(const CodecParams& cp, const fs::path& dir) {
    fs::create_directories(dir);
    io::save_tensor(dir / "mean.cdt1", cp.mean);
    io::save_tensor(dir / "basis.cdt1", cp.basis);
    io::save_tensor(dir / "lat_mean.cdt1", cp.lat_mean);
    io::save_tensor(dir / "lat_std.cdt1", cp.lat_std);
    json j;
    j["q"] = cp.q;
    j["c_lat"] = cp.c_lat;
    j["eigenvalues"] = cp.eigenvalues;
    std::ofstream os(dir / "codec.json");
    if (!os) throw NumericError("cannot write codec manifest in " + dir.string());
    os << j.dump(2) << "\n";
}

CodecParams load_codec(const fs::path& dir) {
    std::ifstream is(dir / "codec.json");
    if (!is) throw_param("no codec manifest at ", (dir / "codec.json").string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw_param("bad codec manifest: ", e.what());
    }
    CodecParams cp;
    cp.q = j.at("q").get<int>();
    cp.c_lat = j.at("c_lat").get<int>();
    cp.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
    cp.mean = io::load_tensor(dir / "mean.cdt1");
    cp.basis = io::load_tensor(dir / "basis.cdt1");
    cp.lat_mean = io::load_tensor(dir / "lat_mean.cdt1");
    cp.lat_std = io::load_tensor(dir / "lat_std.cdt1");
    if (cp.basis.rank() != 2 || cp.basis.extent(0) != cp.c_lat ||
        cp.basis.extent(1) != cp.patch_dim())
        throw_dim("codec basis shape does not match manifest");
    return cp;
}

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
    if (!same_shape(a.shape, b.shape)) throw_dim("psnr shape mismatch");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        mse += d * d;
    }
    mse /= double(a.numel());
    if (mse <= 0.0) return 99.0;  // identical inputs; cap instead of infinity
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace colodiff::codec
