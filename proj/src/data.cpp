#include "dmlm/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dmlm/errors.hpp"
#include "dmlm/rng.hpp"
#include "dmlm/util.hpp"

namespace dmlm {

void DatasetSpec::validate() const {
    if (n_samples == 0 || n_classes == 0 || grid_h == 0 || grid_w == 0 || patch_dim == 0) {
        throw contract_error("DatasetSpec: all sizes must be positive");
    }
    if (noise_std < 0.0) throw contract_error("DatasetSpec: noise_std must be >= 0");
    if (motif_shift <= 0.0 || motif_contrast < 0.0) {
        throw contract_error("DatasetSpec: motif parameters must be positive");
    }
}

DatasetSpec DatasetSpec::from_json_file(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw io_error("dataset spec parse failure in " + path + ": " + e.what());
    }
    DatasetSpec s;
    s.n_samples = j.at("n_samples").get<std::size_t>();
    s.n_classes = j.at("n_classes").get<std::size_t>();
    s.grid_h = j.at("grid_h").get<std::size_t>();
    s.grid_w = j.at("grid_w").get<std::size_t>();
    s.patch_dim = j.at("patch_dim").get<std::size_t>();
    s.noise_std = j.at("noise_std").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.motif_shift = j.value("motif_shift", s.motif_shift);
    s.motif_contrast = j.value("motif_contrast", s.motif_contrast);
    s.validate();
    return s;
}

void DatasetSpec::to_json_file(const std::string& path) const {
    nlohmann::json j;
    j["n_samples"] = n_samples;
    j["n_classes"] = n_classes;
    j["grid_h"] = grid_h;
    j["grid_w"] = grid_w;
    j["patch_dim"] = patch_dim;
    j["noise_std"] = noise_std;
    j["seed"] = seed;
    j["motif_shift"] = motif_shift;
    j["motif_contrast"] = motif_contrast;
    atomic_write_file(path, j.dump(2) + "\n");
}

Eigen::VectorXd class_motif(std::size_t class_id, std::size_t patch_dim, double shift,
                            double contrast) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(patch_dim));
    for (std::size_t k = 0; k < patch_dim; ++k) {
        // Walsh-style sign: parity of bits shared between k and class+1.
        const int parity = std::popcount(k & (class_id + 1)) % 2;
        v[static_cast<Eigen::Index>(k)] = shift + (parity == 0 ? contrast : -contrast);
    }
    return v;
}

Dataset generate_dataset(const DatasetSpec& spec, const Lexicon& lexicon) {
    spec.validate();
    if (spec.n_classes > lexicon.size()) {
        throw contract_error("generate_dataset: lexicon smaller than requested class count");
    }
    const std::size_t n_patches = spec.grid_h * spec.grid_w;
    // Lesion block spans 5/8 of the grid per axis: large enough that the
    // planted class signal survives sequence pooling.
    const std::size_t lesion_h = std::max<std::size_t>(1, 5 * spec.grid_h / 8);
    const std::size_t lesion_w = std::max<std::size_t>(1, 5 * spec.grid_w / 8);

    Dataset ds;
    ds.spec = spec;
    ds.samples.reserve(spec.n_samples);
    Rng rng(spec.seed);

    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        GeneratedSample s;
        s.label = i % spec.n_classes;  // balanced classes
        const Eigen::VectorXd motif =
            class_motif(s.label, spec.patch_dim, spec.motif_shift, spec.motif_contrast);

        const std::size_t r0 = rng.uniform_below(spec.grid_h - lesion_h + 1);
        const std::size_t c0 = rng.uniform_below(spec.grid_w - lesion_w + 1);
        for (std::size_t r = r0; r < r0 + lesion_h; ++r) {
            for (std::size_t c = c0; c < c0 + lesion_w; ++c) {
                s.lesion_region.push_back(r * spec.grid_w + c);
            }
        }

        s.image.grid_h = spec.grid_h;
        s.image.grid_w = spec.grid_w;
        s.image.patches.resize(static_cast<Eigen::Index>(n_patches),
                               static_cast<Eigen::Index>(spec.patch_dim));
        for (Eigen::Index p = 0; p < s.image.patches.rows(); ++p) {
            const bool in_lesion =
                std::binary_search(s.lesion_region.begin(), s.lesion_region.end(),
                                   static_cast<std::size_t>(p));
            for (Eigen::Index k = 0; k < s.image.patches.cols(); ++k) {
                double v = 0.5 + (spec.noise_std > 0.0 ? spec.noise_std * rng.normal() : 0.0);
                if (in_lesion) v += motif[k];
                s.image.patches(p, k) = std::clamp(v, 0.0, 1.0);
            }
        }

        // Findings name the lesion's quadrant with a small closed
        // vocabulary, tying the text to the planted location.
        const double center_r = static_cast<double>(r0) + (static_cast<double>(lesion_h) - 1) / 2.0;
        const double center_c = static_cast<double>(c0) + (static_cast<double>(lesion_w) - 1) / 2.0;
        const std::string vert =
            center_r < static_cast<double>(spec.grid_h) / 2.0 ? "upper" : "lower";
        const std::string horiz =
            center_c < static_cast<double>(spec.grid_w) / 2.0 ? "left" : "right";
        const std::string quadrant = vert + " " + horiz;
        s.findings = {quadrant + " opacity over the " + quadrant + " zone"};

        const auto& entry = lexicon.at(s.label);
        s.report = generate_report(entry.disease, s.findings, ReportBackend::template_backend,
                                   lexicon)
                       .report;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

namespace {
constexpr char kImagesMagic[9] = "DMLMIMG1";
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    ensure_dir(dir);

    {
        std::ostringstream out;
        out.write(kImagesMagic, 8);
        auto put_u64 = [&out](std::uint64_t v) {
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        };
        put_u64(ds.samples.size());
        put_u64(ds.spec.grid_h * ds.spec.grid_w);
        put_u64(ds.spec.patch_dim);
        put_u64(ds.spec.grid_h);
        put_u64(ds.spec.grid_w);
        for (const auto& s : ds.samples) {
            for (Eigen::Index p = 0; p < s.image.patches.rows(); ++p) {
                for (Eigen::Index k = 0; k < s.image.patches.cols(); ++k) {
                    const double v = s.image.patches(p, k);
                    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
                }
            }
        }
        atomic_write_file(dir + "/images.bin", out.str());
    }

    {
        std::ostringstream out;
        for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            const auto& s = ds.samples[i];
            nlohmann::json rec;
            rec["id"] = i;
            rec["label"] = s.label;
            rec["disease"] = s.report.disease;
            rec["report_text"] = serialize_report(s.report);
            rec["findings"] = s.findings;
            rec["lesion_region"] = s.lesion_region;
            out << rec.dump() << "\n";
        }
        atomic_write_file(dir + "/meta.jsonl", out.str());
    }

    ds.spec.to_json_file(dir + "/spec.json");
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.spec = DatasetSpec::from_json_file(dir + "/spec.json");

    const std::string blob = read_file(dir + "/images.bin");
    std::size_t off = 0;
    auto get_bytes = [&](void* dst, std::size_t n) {
        if (off + n > blob.size()) {
            throw io_error("images.bin truncated at offset " + std::to_string(off));
        }
        std::memcpy(dst, blob.data() + off, n);
        off += n;
    };
    char magic[8];
    get_bytes(magic, 8);
    if (std::memcmp(magic, kImagesMagic, 8) != 0) throw io_error("images.bin: bad magic");
    std::uint64_t n = 0, n_patches = 0, patch_dim = 0, grid_h = 0, grid_w = 0;
    get_bytes(&n, 8);
    get_bytes(&n_patches, 8);
    get_bytes(&patch_dim, 8);
    get_bytes(&grid_h, 8);
    get_bytes(&grid_w, 8);
    if (n != ds.spec.n_samples || patch_dim != ds.spec.patch_dim ||
        n_patches != ds.spec.grid_h * ds.spec.grid_w) {
        throw io_error("images.bin header disagrees with spec.json");
    }

    std::vector<GeneratedSample> samples(n);
    for (auto& s : samples) {
        s.image.grid_h = grid_h;
        s.image.grid_w = grid_w;
        s.image.patches.resize(static_cast<Eigen::Index>(n_patches),
                               static_cast<Eigen::Index>(patch_dim));
        for (Eigen::Index p = 0; p < s.image.patches.rows(); ++p) {
            for (Eigen::Index k = 0; k < s.image.patches.cols(); ++k) {
                double v = 0.0;
                get_bytes(&v, 8);
                s.image.patches(p, k) = v;
            }
        }
    }

    std::istringstream meta(read_file(dir + "/meta.jsonl"));
    std::string line;
    std::size_t idx = 0;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        if (idx >= samples.size()) throw io_error("meta.jsonl has more records than images.bin");
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw io_error("meta.jsonl record " + std::to_string(idx) + ": " + e.what());
        }
        auto& s = samples[idx];
        s.label = rec.at("label").get<std::size_t>();
        s.report = parse_report(rec.at("report_text").get<std::string>());
        s.findings = rec.at("findings").get<std::vector<std::string>>();
        s.lesion_region = rec.at("lesion_region").get<std::vector<std::size_t>>();
        ++idx;
    }
    if (idx != samples.size()) throw io_error("meta.jsonl has fewer records than images.bin");
    ds.samples = std::move(samples);
    return ds;
}

std::vector<std::string> corpus_texts(const Dataset& ds) {
    std::vector<std::string> out;
    out.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        std::string text = s.report.definition + "\n" + s.report.appearance;
        for (const auto& o : s.report.observations) text += "\n" + o;
        for (const auto& v : s.report.verdicts) text += "\n" + v;
        out.push_back(std::move(text));
    }
    return out;
}

std::vector<PairedSample> tokenize_dataset(const Dataset& ds, const Vocab& vocab, TextMode mode,
                                           std::size_t max_len) {
    std::vector<PairedSample> out;
    out.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        PairedSample p;
        p.image = s.image;
        p.label = s.label;
        p.lesion_region = s.lesion_region;
        p.text = mode == TextMode::structured
                     ? tokenize_report(s.report, vocab, max_len)
                     : tokenize_findings_only(s.report.observations, vocab, max_len);
        out.push_back(std::move(p));
    }
    return out;
}

TextInput BatchMember::to_text_input() const {
    TextInput t;
    t.token_ids.assign(padded_tokens.begin(),
                       padded_tokens.begin() + static_cast<std::ptrdiff_t>(length));
    t.special.assign(special.begin(), special.begin() + static_cast<std::ptrdiff_t>(length));
    t.spans = spans;
    return t;
}

std::vector<Batch> make_batches(const std::vector<PairedSample>& samples, std::size_t batch_size,
                                std::uint64_t seed, bool shuffle, std::size_t epoch) {
    if (samples.empty()) throw degenerate_input_error("make_batches: empty dataset");
    if (batch_size == 0) throw contract_error("make_batches: batch_size >= 1 required");

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle) {
        Rng rng(Rng::mix(seed, epoch));
        rng.shuffle(order);
    }

    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t stop = std::min(order.size(), start + batch_size);
        Batch b;
        b.padded_len = 0;
        for (std::size_t i = start; i < stop; ++i) {
            b.padded_len = std::max(b.padded_len, samples[order[i]].text.length());
        }
        for (std::size_t i = start; i < stop; ++i) {
            const PairedSample& s = samples[order[i]];
            BatchMember m;
            m.sample_index = order[i];
            m.length = s.text.length();
            m.spans = s.text.spans;
            m.special = s.text.special;
            m.padded_tokens = s.text.token_ids;
            m.padded_tokens.resize(b.padded_len, SpecialTokens::pad);
            m.padding.assign(b.padded_len, false);
            for (std::size_t j = m.length; j < b.padded_len; ++j) m.padding[j] = true;
            b.members.push_back(std::move(m));
        }
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace dmlm
