#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmlm/reports.hpp"
#include "dmlm/types.hpp"
#include "dmlm/vocab.hpp"

namespace dmlm {

/// Synthetic corpus parameters. Class motifs are a fixed function of the
/// class id, so datasets generated with different seeds share the same
/// class signal.
struct DatasetSpec {
    std::size_t n_samples = 0;
    std::size_t n_classes = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::size_t patch_dim = 0;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
    double motif_shift = 0.2;     // uniform intensity added inside the lesion
    double motif_contrast = 0.25; // amplitude of the class-specific sign pattern

    void validate() const;
    static DatasetSpec from_json_file(const std::string& path);
    void to_json_file(const std::string& path) const;
};

struct GeneratedSample {
    ImageInput image;
    StructuredReport report;
    std::size_t label = 0;
    std::vector<std::size_t> lesion_region;  // generator ground truth, test-only
    std::vector<std::string> findings;
};

struct Dataset {
    DatasetSpec spec;
    std::vector<GeneratedSample> samples;
};

/// Class-specific additive motif over patch dimensions:
/// shift + contrast * walsh_sign(class, k). Signs are balanced and
/// orthogonal across classes for power-of-two patch_dim.
Eigen::VectorXd class_motif(std::size_t class_id, std::size_t patch_dim, double shift,
                            double contrast);

/// Background N(0.5, noise_std^2) clipped to [0,1] with the class motif
/// added inside a randomly placed lesion block; the report's findings
/// name the block's quadrant ("upper left opacity").
Dataset generate_dataset(const DatasetSpec& spec, const Lexicon& lexicon);

/// On-disk corpus: images.bin (binary array), meta.jsonl (one record per
/// sample: id, label, disease, report_text, findings, lesion_region),
/// spec.json.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// Section contents per sample, the input to Vocab::build.
std::vector<std::string> corpus_texts(const Dataset& ds);

enum class TextMode { structured, findings_only };

/// Image + tokenized report + label; the (I, T) pairs of the training
/// distribution.
struct PairedSample {
    ImageInput image;
    TextInput text;
    std::size_t label = 0;
    std::vector<std::size_t> lesion_region;
};

std::vector<PairedSample> tokenize_dataset(const Dataset& ds, const Vocab& vocab, TextMode mode,
                                           std::size_t max_len);

/// One batch member carries its text padded to the batch max length plus
/// the padding indicator; consumers slice by length, so padded positions
/// can never reach a loss term.
struct BatchMember {
    std::size_t sample_index = 0;
    std::vector<int> padded_tokens;
    std::vector<bool> padding;
    std::size_t length = 0;
    SectionSpans spans;
    std::vector<bool> special;

    TextInput to_text_input() const;
};

struct Batch {
    std::vector<BatchMember> members;
    std::size_t padded_len = 0;
    std::size_t size() const { return members.size(); }
};

/// Epoch worth of batches: optional shuffle by (seed, epoch), final
/// partial batch kept.
std::vector<Batch> make_batches(const std::vector<PairedSample>& samples, std::size_t batch_size,
                                std::uint64_t seed, bool shuffle, std::size_t epoch = 0);

}  // namespace dmlm
