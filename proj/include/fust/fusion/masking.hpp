#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>

#include "fust/data/synthetic.hpp"
#include "fust/numerics/rng.hpp"

namespace fust::fusion {

enum class MaskKind { image, spectrogram };

// Modality a carries spectrograms, modality v images.
MaskKind mask_kind_of(data::Modality m);

struct MaskingPolicy {
    double rho_a = 1.0;
    double rho_v = 0.4;
    double eta_a = 1.0;
    double eta_v = 1.0;
    double t = 0.2;
    std::size_t patch_size = 4;   // image: side of square patches
    std::size_t stripe_width = 1; // spectrogram: width of time/frequency stripes
    bool resample_per_epoch = true;

    void validate() const;
};

nlohmann::json to_json(const MaskingPolicy& p);
MaskingPolicy masking_policy_from_json(const nlohmann::json& j);

struct MaskRatios {
    double a = 0.0;
    double v = 0.0;
};

// m_a = rho_a * tanh(eta_a * (c_a - c_v)) if c_a > c_v and c_v > t, else 0;
// m_v symmetric. At most one of the two is nonzero.
MaskRatios masking_ratio(double c_a, double c_v, const MaskingPolicy& policy);

// Zero-fill a C x H x W sample. Image: non-overlapping p x p patches chosen by
// the stream until the zeroed fraction is the largest multiple of p^2/(HW) not
// above `ratio`. Spectrogram: alternating time-column and frequency-row stripes
// of width w, added while the zeroed fraction stays <= ratio. The input is not
// modified.
Tensor apply_mask(const Tensor& sample, MaskKind kind, double ratio, Rng& rng, std::size_t geometry);

// Granularity of the achievable zeroed fractions for a shape.
double mask_quantum(const Shape& chw, MaskKind kind, std::size_t geometry);

// Stream for one sample's mask: keyed by (seed, sample_id, epoch, modality).
// With per-epoch resampling off, the epoch key is fixed.
Rng mask_stream(std::uint64_t seed, std::uint64_t sample_id, std::size_t epoch, data::Modality m, bool resample);

double zero_fraction(const Tensor& t);

} // namespace fust::fusion
