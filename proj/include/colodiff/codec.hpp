#pragma once

#include <filesystem>
#include <vector>

#include "colodiff/tensor.hpp"

// Stand-in for the pretrained VAE: a closed-form per-patch PCA autoencoder.
// Pixel clips [F,3,H,W] map to latents [F,C_lat,h,w] (h = H/q) and back; the
// latent channels are normalized to zero mean / unit variance over the fit
// set so the diffusion process sees unit-scale data.
namespace colodiff::codec {

struct CodecParams {
    int q = 4;
    int c_lat = 4;
    Tensor<float> mean{{1}};      // [pd], pd = 3*q*q, patch mean
    Tensor<float> basis{{1, 1}};  // [c_lat, pd], orthonormal rows
    Tensor<float> lat_mean{{1}};  // [c_lat]
    Tensor<float> lat_std{{1}};   // [c_lat], floored away from zero
    std::vector<double> eigenvalues;  // descending, diagnostics only

    int64_t patch_dim() const { return int64_t(3) * q * q; }
};

// Principal-subspace fit over all q x q patches of the given clips.
// Covariance eigenvalues are floored at 1e-8 before the normalization stats
// are derived, so rank-deficient data cannot produce zero scales.
CodecParams fit_codec(const std::vector<Tensor<float>>& clips, int q, int c_lat);

Tensor<float> encode(const CodecParams& cp, const Tensor<float>& video);
Tensor<float> decode(const CodecParams& cp, const Tensor<float>& latent);

void save_codec(const CodecParams& cp, const std::filesystem::path& dir);
CodecParams load_codec(const std::filesystem::path& dir);

// Peak signal-to-noise ratio for [0,1]-valued tensors of equal shape.
double psnr(const Tensor<float>& a, const Tensor<float>& b);

}  // namespace colodiff::codec
