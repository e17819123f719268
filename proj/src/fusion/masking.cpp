#include "fust/fusion/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fust/common/json_fields.hpp"

namespace fust::fusion {

MaskKind mask_kind_of(data::Modality m) {
    return m == data::Modality::a ? MaskKind::spectrogram : MaskKind::image;
}

void MaskingPolicy::validate() const {
    auto unit = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("policy.") + name, "must lie in [0, 1]");
    };
    unit(rho_a, "rho_a");
    unit(rho_v, "rho_v");
    unit(t, "t");
    if (!(eta_a > 0.0)) throw ConfigError("policy.eta_a", "must be > 0");
    if (!(eta_v > 0.0)) throw ConfigError("policy.eta_v", "must be > 0");
    if (patch_size == 0) throw ConfigError("policy.patch_size", "must be >= 1");
    if (stripe_width == 0) throw ConfigError("policy.stripe_width", "must be >= 1");
}

nlohmann::json to_json(const MaskingPolicy& p) {
    return {{"rho_a", p.rho_a},         {"rho_v", p.rho_v},
            {"eta_a", p.eta_a},         {"eta_v", p.eta_v},
            {"t", p.t},                 {"patch_size", p.patch_size},
            {"stripe_width", p.stripe_width}, {"resample_per_epoch", p.resample_per_epoch}};
}

MaskingPolicy masking_policy_from_json(const nlohmann::json& j) {
    require_known_keys(j, {"rho_a", "rho_v", "eta_a", "eta_v", "t", "patch_size", "stripe_width", "resample_per_epoch"},
                       "policy");
    MaskingPolicy p;
    read_field(j, "rho_a", p.rho_a, "policy");
    read_field(j, "rho_v", p.rho_v, "policy");
    read_field(j, "eta_a", p.eta_a, "policy");
    read_field(j, "eta_v", p.eta_v, "policy");
    read_field(j, "t", p.t, "policy");
    read_field(j, "patch_size", p.patch_size, "policy");
    read_field(j, "stripe_width", p.stripe_width, "policy");
    read_field(j, "resample_per_epoch", p.resample_per_epoch, "policy");
    p.validate();
    return p;
}

MaskRatios masking_ratio(double c_a, double c_v, const MaskingPolicy& policy) {
    MaskRatios r;
    if (c_a > c_v && c_v > policy.t) r.a = policy.rho_a * std::tanh(policy.eta_a * (c_a - c_v));
    if (c_v > c_a && c_a > policy.t) r.v = policy.rho_v * std::tanh(policy.eta_v * (c_v - c_a));
    return r;
}

double mask_quantum(const Shape& chw, MaskKind kind, std::size_t geometry) {
    const double h = static_cast<double>(chw.at(1)), w = static_cast<double>(chw.at(2));
    const double g = static_cast<double>(geometry);
    if (kind == MaskKind::image) return g * g / (h * w);
    return std::max(g / w, g / h);
}

Tensor apply_mask(const Tensor& sample, MaskKind kind, double ratio, Rng& rng, std::size_t geometry) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw ContractError("apply_mask: ratio must lie in [0, 1), got " + std::to_string(ratio));
    if (sample.rank() != 3) throw DimensionError("apply_mask: expected C x H x W sample, got " + shape_str(sample.shape()));
    if (geometry == 0) throw ContractError("apply_mask: geometry must be >= 1");
    Tensor out = sample;
    if (ratio == 0.0) return out;

    const std::size_t channels = sample.dim(0), rows = sample.dim(1), cols = sample.dim(2);
    const double plane = static_cast<double>(rows * cols);
    const double budget = ratio * plane + 1e-9;
    std::vector<std::uint8_t> zeroed(rows * cols, 0);
    std::size_t n_zeroed = 0;

    auto zero_rect = [&](std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
        for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = c0; c < c1; ++c) {
                if (!zeroed[r * cols + c]) {
                    zeroed[r * cols + c] = 1;
                    ++n_zeroed;
                }
            }
    };
    auto count_new = [&](std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
        std::size_t n = 0;
        for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = c0; c < c1; ++c) n += zeroed[r * cols + c] ? 0 : 1;
        return n;
    };

    if (kind == MaskKind::image) {
        const std::size_t p = geometry;
        const std::size_t grid_r = rows / p, grid_c = cols / p;
        std::vector<std::size_t> cells(grid_r * grid_c);
        std::iota(cells.begin(), cells.end(), 0);
        std::shuffle(cells.begin(), cells.end(), rng);
        const auto wanted = static_cast<std::size_t>(std::floor(budget / static_cast<double>(p * p)));
        for (std::size_t i = 0; i < std::min(wanted, cells.size()); ++i) {
            const std::size_t gr = cells[i] / grid_c, gc = cells[i] % grid_c;
            zero_rect(gr * p, gr * p + p, gc * p, gc * p + p);
        }
    } else {
        const std::size_t w = geometry;
        // Time stripes span all frequency rows; frequency stripes span all time columns.
        std::vector<std::size_t> time_slots(cols / w), freq_slots(rows / w);
        std::iota(time_slots.begin(), time_slots.end(), 0);
        std::iota(freq_slots.begin(), freq_slots.end(), 0);
        std::shuffle(time_slots.begin(), time_slots.end(), rng);
        std::shuffle(freq_slots.begin(), freq_slots.end(), rng);
        std::size_t next_time = 0, next_freq = 0;
        bool time_turn = true;
        while (next_time < time_slots.size() || next_freq < freq_slots.size()) {
            if (time_turn && next_time >= time_slots.size()) time_turn = false;
            if (!time_turn && next_freq >= freq_slots.size()) time_turn = true;
            std::size_t r0 = 0, r1 = rows, c0 = 0, c1 = cols;
            if (time_turn) {
                c0 = time_slots[next_time] * w;
                c1 = c0 + w;
            } else {
                r0 = freq_slots[next_freq] * w;
                r1 = r0 + w;
            }
            if (static_cast<double>(n_zeroed + count_new(r0, r1, c0, c1)) > budget) break;
            zero_rect(r0, r1, c0, c1);
            (time_turn ? next_time : next_freq)++;
            time_turn = !time_turn;
        }
    }

    for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t i = 0; i < rows * cols; ++i)
            if (zeroed[i]) out[ch * rows * cols + i] = 0.0;
    return out;
}

Rng mask_stream(std::uint64_t seed, std::uint64_t sample_id, std::size_t epoch, data::Modality m, bool resample) {
    return keyed_rng({seed, tag(Stream::mask), sample_id, resample ? static_cast<std::uint64_t>(epoch) : 0u,
                      static_cast<std::uint64_t>(m)});
}

double zero_fraction(const Tensor& t) {
    if (t.empty()) return 0.0;
    std::size_t z = 0;
    for (double v : t.values()) z += v == 0.0 ? 1 : 0;
    return static_cast<double>(z) / static_cast<double>(t.size());
}

} // namespace fust::fusion
