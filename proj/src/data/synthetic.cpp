#include "fust/data/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fust/common/json_fields.hpp"
#include "fust/numerics/rng.hpp"

namespace fust::data {
namespace {

// Distinct frequencies for each class, drawn once per (seed, modality).
std::vector<std::pair<std::size_t, std::size_t>> class_frequencies(const SyntheticSpec& spec, Modality m) {
    const Shape& shape = m == Modality::a ? spec.shape_a : spec.shape_v;
    const std::size_t rows = shape[1], cols = shape[2];
    std::vector<std::pair<std::size_t, std::size_t>> pool;
    const std::size_t max_r = rows / 2 > 1 ? rows / 2 - 1 : 0;
    const std::size_t max_c = cols / 2 > 1 ? cols / 2 - 1 : 0;
    if (m == Modality::a) {
        for (std::size_t kr = 1; kr <= max_r; ++kr) pool.emplace_back(kr, 0);
    } else {
        for (std::size_t kr = 1; kr <= max_r; ++kr)
            for (std::size_t kc = 1; kc <= max_c; ++kc) pool.emplace_back(kr, kc);
    }
    if (pool.size() < spec.n_classes) {
        throw ContractError(std::string("synthetic: shape of modality ") + modality_name(m) +
                            " too small for " + std::to_string(spec.n_classes) + " orthogonal templates");
    }
    Rng rng = keyed_rng({spec.seed, tag(Stream::template_), static_cast<std::uint64_t>(m)});
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(spec.n_classes);
    return pool;
}

void check_shape(const Shape& s, const char* what) {
    if (s.size() != 3 || s[0] == 0 || s[1] == 0 || s[2] == 0) {
        throw ContractError(std::string("synthetic.") + what + ": expected [C, H, W] with positive entries");
    }
}

} // namespace

const char* modality_name(Modality m) {
    return m == Modality::a ? "a" : "v";
}

Modality other(Modality m) {
    return m == Modality::a ? Modality::v : Modality::a;
}

std::vector<int> Dataset::labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
}

std::vector<std::uint64_t> Dataset::ids() const {
    std::vector<std::uint64_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.id);
    return out;
}

void SyntheticSpec::validate() const {
    if (n_classes < 2) throw ContractError("synthetic.n_classes: need at least 2 classes");
    if (samples_per_class.train == 0 || samples_per_class.val == 0 || samples_per_class.test == 0) {
        throw ContractError("synthetic.samples_per_class: all counts must be >= 1");
    }
    check_shape(shape_a, "shape_a");
    check_shape(shape_v, "shape_v");
    if (!(snr_a > 0.0)) throw ContractError("synthetic.snr_a: must be > 0");
    if (!(snr_v > 0.0)) throw ContractError("synthetic.snr_v: must be > 0");
}

nlohmann::json to_json(const SyntheticSpec& spec) {
    return {{"n_classes", spec.n_classes},
            {"samples_per_class",
             {{"train", spec.samples_per_class.train},
              {"val", spec.samples_per_class.val},
              {"test", spec.samples_per_class.test}}},
            {"shape_a", spec.shape_a},
            {"shape_v", spec.shape_v},
            {"snr_a", spec.snr_a},
            {"snr_v", spec.snr_v},
            {"seed", spec.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    require_known_keys(j, {"n_classes", "samples_per_class", "shape_a", "shape_v", "snr_a", "snr_v", "seed"},
                       "synthetic");
    SyntheticSpec spec;
    read_field(j, "n_classes", spec.n_classes, "synthetic");
    if (auto it = j.find("samples_per_class"); it != j.end()) {
        require_known_keys(*it, {"train", "val", "test"}, "synthetic.samples_per_class");
        read_field(*it, "train", spec.samples_per_class.train, "synthetic.samples_per_class");
        read_field(*it, "val", spec.samples_per_class.val, "synthetic.samples_per_class");
        read_field(*it, "test", spec.samples_per_class.test, "synthetic.samples_per_class");
    }
    read_field(j, "shape_a", spec.shape_a, "synthetic");
    read_field(j, "shape_v", spec.shape_v, "synthetic");
    read_field(j, "snr_a", spec.snr_a, "synthetic");
    read_field(j, "snr_v", spec.snr_v, "synthetic");
    read_field(j, "seed", spec.seed, "synthetic");
    spec.validate();
    return spec;
}

Tensor class_template(const SyntheticSpec& spec, Modality m, int cls) {
    const Shape& shape = m == Modality::a ? spec.shape_a : spec.shape_v;
    const auto freqs = class_frequencies(spec, m);
    const auto [kr, kc] = freqs.at(static_cast<std::size_t>(cls));
    Rng rng = keyed_rng({spec.seed, tag(Stream::template_), static_cast<std::uint64_t>(m), 1000u + cls});
    const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
    const std::size_t channels = shape[0], rows = shape[1], cols = shape[2];
    Tensor t(shape, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < cols; ++k) {
                const double arg = 2.0 * std::numbers::pi *
                                       (static_cast<double>(kr * r) / static_cast<double>(rows) +
                                        static_cast<double>(kc * k) / static_cast<double>(cols)) +
                                   phase;
                t[(c * rows + r) * cols + k] = std::cos(arg);
            }
    return t;
}

MultiModalSample synthesize_sample(const SyntheticSpec& spec, std::uint64_t id, int label) {
    MultiModalSample s;
    s.id = id;
    s.label = label;
    for (Modality m : {Modality::a, Modality::v}) {
        Tensor t = class_template(spec, m, label);
        const double snr = m == Modality::a ? spec.snr_a : spec.snr_v;
        Rng rng = keyed_rng({spec.seed, tag(Stream::noise), id, static_cast<std::uint64_t>(m)});
        std::normal_distribution<double> noise(0.0, 1.0);
        for (auto& v : t.storage()) v = snr * v + noise(rng);
        (m == Modality::a ? s.a : s.v) = std::move(t);
    }
    return s;
}

SplitDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SplitDataset out;
    std::uint64_t next_id = 0;
    for (auto [ds, per_class] : {std::pair{&out.train, spec.samples_per_class.train},
                                 std::pair{&out.val, spec.samples_per_class.val},
                                 std::pair{&out.test, spec.samples_per_class.test}}) {
        ds->n_classes = spec.n_classes;
        const std::size_t total = per_class * spec.n_classes;
        for (std::size_t i = 0; i < total; ++i) {
            ds->samples.push_back(synthesize_sample(spec, next_id++, static_cast<int>(i % spec.n_classes)));
        }
    }
    return out;
}

Dataset per_class_subset(const Dataset& ds, std::size_t per_class) {
    if (per_class == 0) return ds;
    Dataset out;
    out.n_classes = ds.n_classes;
    std::vector<std::size_t> taken(ds.n_classes, 0);
    for (const auto& s : ds.samples) {
        auto& n = taken.at(static_cast<std::size_t>(s.label));
        if (n < per_class) {
            out.samples.push_back(s);
            ++n;
        }
    }
    return out;
}

Tensor probe_inputs(const SyntheticSpec& spec, std::size_t n, Modality m) {
    if (n == 0) throw ContractError("probe_inputs: need at least one probe sample");
    Dataset ds;
    ds.n_classes = spec.n_classes;
    for (std::size_t i = 0; i < n; ++i) {
        ds.samples.push_back(synthesize_sample(spec, probe_id_base + i, static_cast<int>(i % spec.n_classes)));
    }
    return stack_inputs(ds, m);
}

SplitDataset split_dataset(const Dataset& dataset, const std::vector<double>& fractions, std::uint64_t seed) {
    if (fractions.size() != 3) throw ContractError("split_dataset: expected three fractions (train, val, test)");
    double total = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw ContractError("split_dataset: negative fraction");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("split_dataset: fractions must sum to 1");
    const std::size_t n_nonzero = static_cast<std::size_t>(std::count_if(fractions.begin(), fractions.end(),
                                                                          [](double f) { return f > 0.0; }));

    std::vector<std::vector<std::size_t>> by_class(dataset.n_classes);
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        by_class.at(static_cast<std::size_t>(dataset.samples[i].label)).push_back(i);
    }
    SplitDataset out;
    out.train.n_classes = out.val.n_classes = out.test.n_classes = dataset.n_classes;
    std::array<std::vector<std::size_t>, 3> picked;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.size() < n_nonzero) {
            throw ContractError("split_dataset: class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                                " samples, fewer than the " + std::to_string(n_nonzero) + " requested splits");
        }
        Rng rng = keyed_rng({seed, tag(Stream::split), c});
        std::shuffle(members.begin(), members.end(), rng);
        const std::size_t n = members.size();
        const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
        const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t which = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
            picked[which].push_back(members[i]);
        }
    }
    std::array<Dataset*, 3> dst{&out.train, &out.val, &out.test};
    for (std::size_t s = 0; s < 3; ++s) {
        std::sort(picked[s].begin(), picked[s].end());
        for (std::size_t i : picked[s]) dst[s]->samples.push_back(dataset.samples[i]);
    }
    return out;
}

Tensor stack_inputs(const Dataset& ds, const std::vector<std::size_t>& indices, Modality m) {
    if (indices.empty()) throw ContractError("stack_inputs: empty selection");
    const Tensor& first = ds.samples.at(indices.front()).input(m);
    Shape shape{indices.size()};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    Tensor out(shape, 0.0);
    const std::size_t per = first.size();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensor& src = ds.samples.at(indices[i]).input(m);
        if (src.shape() != first.shape()) throw DimensionError("stack_inputs: samples disagree in shape");
        std::copy(src.storage().begin(), src.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return out;
}

Tensor stack_inputs(const Dataset& ds, Modality m) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    return stack_inputs(ds, all, m);
}

Tensor adapt_input(const Tensor& batch, const Shape& chw) {
    if (batch.rank() != 4 || chw.size() != 3) throw DimensionError("adapt_input: expected NCHW batch and [C,H,W] target");
    const std::size_t n_batch = batch.dim(0), c_in = batch.dim(1), h_in = batch.dim(2), w_in = batch.dim(3);
    const std::size_t c_out = chw[0], h_out = chw[1], w_out = chw[2];
    if (c_in == c_out && h_in == h_out && w_in == w_out) return batch;

    // Channel adapter: average to one plane, then replicate.
    Tensor mono({n_batch, 1, h_in, w_in}, 0.0);
    for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t c = 0; c < c_in; ++c)
            for (std::size_t h = 0; h < h_in; ++h)
                for (std::size_t w = 0; w < w_in; ++w) mono.at(n, 0, h, w) += batch.at(n, c, h, w) / static_cast<double>(c_in);

    auto source = [](std::size_t o, std::size_t in, std::size_t out) {
        // align-corners=false convention
        const double pos = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
        return std::clamp(pos, 0.0, static_cast<double>(in - 1));
    };
    Tensor out({n_batch, c_out, h_out, w_out}, 0.0);
    for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t h = 0; h < h_out; ++h) {
            const double sh = source(h, h_in, h_out);
            const auto h0 = static_cast<std::size_t>(sh);
            const std::size_t h1 = std::min(h0 + 1, h_in - 1);
            const double fh = sh - static_cast<double>(h0);
            for (std::size_t w = 0; w < w_out; ++w) {
                const double sw = source(w, w_in, w_out);
                const auto w0 = static_cast<std::size_t>(sw);
                const std::size_t w1 = std::min(w0 + 1, w_in - 1);
                const double fw = sw - static_cast<double>(w0);
                const double v = (1 - fh) * ((1 - fw) * mono.at(n, 0, h0, w0) + fw * mono.at(n, 0, h0, w1)) +
                                 fh * ((1 - fw) * mono.at(n, 0, h1, w0) + fw * mono.at(n, 0, h1, w1));
                for (std::size_t c = 0; c < c_out; ++c) out.at(n, c, h, w) = v;
            }
        }
    return out;
}

} // namespace fust::data
