#include "mmfuse/experts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mmfuse/binio.hpp"
#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {

constexpr char kBinaryMagic[4] = {'M', 'M', 'F', 'X'};
constexpr uint32_t kFormatVersion = 1;
constexpr uint32_t kMaxDim = 1u << 16;
constexpr uint32_t kMaxTokens = 1u << 20;
constexpr uint32_t kMaxIdLen = 4096;

[[noreturn]] void span_fail(const std::string& where, const std::string& detail) {
    throw FormatError(FormatError::Kind::span_violation, where + ": " + detail);
}

}  // namespace

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::rgb: return "rgb";
        case Modality::motion: return "motion";
        case Modality::audio: return "audio";
    }
    return "?";
}

std::optional<Modality> modality_from_name(const std::string& name) {
    if (name == "rgb") {
        return Modality::rgb;
    }
    if (name == "motion") {
        return Modality::motion;
    }
    if (name == "audio") {
        return Modality::audio;
    }
    return std::nullopt;
}

const ExpertSequence* VideoFeatureSet::find(Modality m) const {
    for (const auto& seq : sequences) {
        if (seq.modality == m) {
            return &seq;
        }
    }
    return nullptr;
}

void VideoFeatureSet::validate() const {
    const std::string where = "feature set '" + video_id + "'";
    if (sequences.empty()) {
        throw FormatError(FormatError::Kind::bad_field, where + ": no modalities");
    }
    bool seen[3] = {false, false, false};
    for (const auto& seq : sequences) {
        const auto tag = static_cast<size_t>(seq.modality);
        if (tag > 2) {
            throw FormatError(FormatError::Kind::bad_field, where + ": unknown modality tag");
        }
        if (seen[tag]) {
            throw FormatError(FormatError::Kind::bad_field,
                              where + ": duplicate modality " + modality_name(seq.modality));
        }
        seen[tag] = true;
        if (seq.dim == 0) {
            throw FormatError(FormatError::Kind::dim_mismatch,
                              where + ": zero dim for " + modality_name(seq.modality));
        }
        // beg_sec strictly increasing: no duplicate or disordered starts.
        // Windowed modalities (motion) may still cover overlapping ranges.
        for (size_t i = 0; i < seq.tokens.size(); ++i) {
            const ExpertToken& tok = seq.tokens[i];
            if (tok.vec.size() != seq.dim) {
                throw FormatError(FormatError::Kind::dim_mismatch,
                                  where + ": token " + std::to_string(i) + " of " + modality_name(seq.modality) +
                                      " has " + std::to_string(tok.vec.size()) + " values, dim is " +
                                      std::to_string(seq.dim));
            }
            if (tok.end_sec <= tok.beg_sec) {
                span_fail(where, "token " + std::to_string(i) + " of " + modality_name(seq.modality) +
                                     " has end_sec <= beg_sec");
            }
            if (tok.end_sec > nsec) {
                span_fail(where, "token " + std::to_string(i) + " of " + modality_name(seq.modality) +
                                     " ends at " + std::to_string(tok.end_sec) + " past nsec " + std::to_string(nsec));
            }
            if (i > 0 && tok.beg_sec <= seq.tokens[i - 1].beg_sec) {
                span_fail(where, modality_name(seq.modality) + std::string(" tokens unsorted at ") +
                                     std::to_string(i));
            }
            for (float v : tok.vec) {
                if (!std::isfinite(v)) {
                    throw FormatError(FormatError::Kind::non_finite_value,
                                      where + ": non-finite value in " + modality_name(seq.modality));
                }
            }
        }
    }
}

// ---- binary format -----------------------------------------------------

void save_expert_file(const VideoFeatureSet& fs, const std::string& path) {
    fs.validate();
    LeWriter w(path);
    w.bytes(kBinaryMagic, 4);
    w.u32(kFormatVersion);
    w.str32(fs.video_id);
    w.u32(fs.nsec);
    w.u8(static_cast<uint8_t>(fs.sequences.size()));
    for (const auto& seq : fs.sequences) {
        w.u8(static_cast<uint8_t>(seq.modality));
        w.u32(seq.dim);
        w.u32(static_cast<uint32_t>(seq.tokens.size()));
        for (const auto& tok : seq.tokens) {
            w.u32(tok.beg_sec);
            w.u32(tok.end_sec);
            for (float v : tok.vec) {
                w.f32(v);
            }
        }
    }
    w.commit();
}

namespace {

VideoFeatureSet load_binary(const std::string& path) {
    LeReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kBinaryMagic, 4) != 0) {
        throw FormatError(FormatError::Kind::bad_magic, "'" + path + "' is not an expert feature file");
    }
    const uint32_t version = r.u32();
    if (version != kFormatVersion) {
        throw FormatError(FormatError::Kind::bad_version,
                          "'" + path + "' has unsupported version " + std::to_string(version));
    }
    VideoFeatureSet fs;
    fs.video_id = r.str32(kMaxIdLen);
    fs.nsec = r.u32();
    const uint8_t n_modalities = r.u8();
    for (uint8_t mi = 0; mi < n_modalities; ++mi) {
        ExpertSequence seq;
        const uint8_t tag = r.u8();
        if (tag > 2) {
            throw FormatError(FormatError::Kind::bad_field,
                              "'" + path + "' has unknown modality tag " + std::to_string(tag));
        }
        seq.modality = static_cast<Modality>(tag);
        seq.dim = r.u32();
        if (seq.dim == 0 || seq.dim > kMaxDim) {
            throw FormatError(FormatError::Kind::dim_mismatch,
                              "'" + path + "' has invalid dim " + std::to_string(seq.dim));
        }
        const uint32_t n_tokens = r.u32();
        if (n_tokens > kMaxTokens) {
            throw FormatError(FormatError::Kind::bad_field, "'" + path + "' token count too large");
        }
        seq.tokens.resize(n_tokens);
        for (auto& tok : seq.tokens) {
            tok.beg_sec = r.u32();
            tok.end_sec = r.u32();
            tok.vec.resize(seq.dim);
            for (float& v : tok.vec) {
                v = r.f32();
            }
        }
        fs.sequences.push_back(std::move(seq));
    }
    fs.validate();
    return fs;
}

// ---- text mirror format --------------------------------------------------

std::string format_f32(float v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    return buf;
}

[[noreturn]] void text_fail(const std::string& path, int line_no, const std::string& detail) {
    throw FormatError(FormatError::Kind::bad_field,
                      "'" + path + "' line " + std::to_string(line_no) + ": " + detail);
}

VideoFeatureSet load_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    std::string line;
    int line_no = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            if (!line.empty()) {
                return true;
            }
        }
        return false;
    };

    if (!next_line()) {
        throw FormatError(FormatError::Kind::truncated, "'" + path + "' is empty");
    }
    std::istringstream head(line);
    std::string magic;
    uint32_t version = 0;
    head >> magic >> version;
    if (magic != "MMFXT") {
        throw FormatError(FormatError::Kind::bad_magic, "'" + path + "' is not a text expert feature file");
    }
    if (version != kFormatVersion) {
        throw FormatError(FormatError::Kind::bad_version,
                          "'" + path + "' has unsupported version " + std::to_string(version));
    }

    VideoFeatureSet fs;
    uint32_t n_modalities = 0;
    {
        if (!next_line()) {
            throw FormatError(FormatError::Kind::truncated, "'" + path + "' missing id line");
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key >> fs.video_id;
        if (key != "id") {
            text_fail(path, line_no, "expected 'id'");
        }
        if (!next_line()) {
            throw FormatError(FormatError::Kind::truncated, "'" + path + "' missing nsec line");
        }
        std::istringstream ls2(line);
        ls2 >> key >> fs.nsec;
        if (key != "nsec" || ls2.fail()) {
            text_fail(path, line_no, "expected 'nsec <n>'");
        }
        if (!next_line()) {
            throw FormatError(FormatError::Kind::truncated, "'" + path + "' missing modalities line");
        }
        std::istringstream ls3(line);
        ls3 >> key >> n_modalities;
        if (key != "modalities" || ls3.fail()) {
            text_fail(path, line_no, "expected 'modalities <k>'");
        }
    }

    for (uint32_t mi = 0; mi < n_modalities; ++mi) {
        if (!next_line()) {
            throw FormatError(FormatError::Kind::truncated, "'" + path + "' missing modality header");
        }
        std::istringstream ls(line);
        std::string key, name, dim_key, tokens_key;
        uint32_t dim = 0, n_tokens = 0;
        ls >> key >> name >> dim_key >> dim >> tokens_key >> n_tokens;
        if (key != "modality" || dim_key != "dim" || tokens_key != "tokens" || ls.fail()) {
            text_fail(path, line_no, "expected 'modality <name> dim <d> tokens <t>'");
        }
        auto modality = modality_from_name(name);
        if (!modality) {
            text_fail(path, line_no, "unknown modality '" + name + "'");
        }
        if (dim == 0 || dim > kMaxDim || n_tokens > kMaxTokens) {
            text_fail(path, line_no, "invalid dim or token count");
        }
        ExpertSequence seq;
        seq.modality = *modality;
        seq.dim = dim;
        for (uint32_t ti = 0; ti < n_tokens; ++ti) {
            if (!next_line()) {
                throw FormatError(FormatError::Kind::truncated, "'" + path + "' missing token line");
            }
            std::istringstream ts(line);
            std::string tok_key;
            ExpertToken tok;
            ts >> tok_key >> tok.beg_sec >> tok.end_sec;
            if (tok_key != "token" || ts.fail()) {
                text_fail(path, line_no, "expected 'token <beg> <end> <values...>'");
            }
            tok.vec.reserve(dim);
            double v;
            while (ts >> v) {
                tok.vec.push_back(static_cast<float>(v));
            }
            if (tok.vec.size() != dim) {
                throw FormatError(FormatError::Kind::dim_mismatch,
                                  "'" + path + "' line " + std::to_string(line_no) + ": " +
                                      std::to_string(tok.vec.size()) + " values, dim is " + std::to_string(dim));
            }
            seq.tokens.push_back(std::move(tok));
        }
        fs.sequences.push_back(std::move(seq));
    }
    fs.validate();
    return fs;
}

}  // namespace

void save_expert_file_text(const VideoFeatureSet& fs, const std::string& path) {
    fs.validate();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) {
            throw IoError("cannot open '" + tmp + "' for writing");
        }
        out << "MMFXT " << kFormatVersion << "\n";
        out << "id " << fs.video_id << "\n";
        out << "nsec " << fs.nsec << "\n";
        out << "modalities " << fs.sequences.size() << "\n";
        for (const auto& seq : fs.sequences) {
            out << "modality " << modality_name(seq.modality) << " dim " << seq.dim << " tokens " << seq.tokens.size()
                << "\n";
            for (const auto& tok : seq.tokens) {
                out << "token " << tok.beg_sec << " " << tok.end_sec;
                for (float v : tok.vec) {
                    out << " " << format_f32(v);
                }
                out << "\n";
            }
        }
        out.flush();
        if (!out) {
            throw IoError("write failed on '" + tmp + "'");
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw IoError("cannot rename '" + tmp + "' to '" + path + "'");
    }
}

VideoFeatureSet load_expert_file(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    char head[5] = {0, 0, 0, 0, 0};
    probe.read(head, 5);
    probe.close();
    if (std::memcmp(head, "MMFXT", 5) == 0) {
        return load_text(path);
    }
    return load_binary(path);
}

int64_t truncate_to_max_seconds(VideoFeatureSet& fs, uint32_t max_seconds) {
    int64_t dropped = 0;
    for (auto& seq : fs.sequences) {
        auto keep_end = std::partition_point(seq.tokens.begin(), seq.tokens.end(),
                                             [&](const ExpertToken& t) { return t.end_sec <= max_seconds; });
        dropped += std::distance(keep_end, seq.tokens.end());
        seq.tokens.erase(keep_end, seq.tokens.end());
    }
    if (fs.nsec > max_seconds) {
        fs.nsec = max_seconds;
    }
    return dropped;
}

// ---- synthetic experts ---------------------------------------------------

std::vector<double> modality_projection(const SynthSpec& spec, Modality m, uint32_t dim) {
    Philox rng = Philox(spec.projection_seed, rng_stream::modality_projection).split(static_cast<uint64_t>(m));
    std::vector<double> w(static_cast<size_t>(dim) * spec.concept_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec.concept_dim));
    for (double& x : w) {
        x = rng.gaussian() * scale;
    }
    return w;
}

VideoFeatureSet synth_features(const SynthSpec& spec, uint64_t seed, const std::vector<double>& concept_vec,
                               uint32_t base_nsec, double noise_level, const std::string& video_id) {
    if (base_nsec < 1) {
        throw ConfigError("synth_features: nsec must be >= 1");
    }
    if (concept_vec.size() != spec.concept_dim) {
        throw ShapeError("synth_features: concept vector has " + std::to_string(concept_vec.size()) +
                         " entries, concept_dim is " + std::to_string(spec.concept_dim));
    }
    const uint32_t scale = std::max(1u, spec.span_scale);
    const uint32_t nsec = base_nsec * scale;
    if (nsec > spec.max_seconds) {
        throw ConfigError("synth_features: nsec " + std::to_string(nsec) + " exceeds max_seconds " +
                          std::to_string(spec.max_seconds) + "; truncation is the caller's job");
    }

    VideoFeatureSet fs;
    fs.video_id = video_id;
    fs.nsec = nsec;
    Philox rng(seed, rng_stream::noise);

    for (const auto& [modality, dim] : spec.modality_dims) {
        const std::vector<double> w = modality_projection(spec, modality, dim);
        std::vector<double> base(dim, 0.0);
        for (uint32_t i = 0; i < dim; ++i) {
            const double* wrow = w.data() + static_cast<size_t>(i) * spec.concept_dim;
            double acc = 0.0;
            for (uint32_t j = 0; j < spec.concept_dim; ++j) {
                acc += wrow[j] * concept_vec[j];
            }
            base[i] = acc;
        }

        std::vector<std::pair<uint32_t, uint32_t>> spans;
        switch (modality) {
            case Modality::rgb:
                for (uint32_t t = 0; t < base_nsec; ++t) {
                    spans.emplace_back(t * scale, (t + 1) * scale);
                }
                break;
            case Modality::motion:
                for (uint32_t t = 0; t < base_nsec; ++t) {
                    spans.emplace_back(t * scale, std::min(t + spec.motion_window, base_nsec) * scale);
                }
                break;
            case Modality::audio:
                for (uint32_t k = 0; k < base_nsec / 5; ++k) {
                    spans.emplace_back(5 * k * scale, (5 * k + 5) * scale);
                }
                break;
        }
        if (spans.empty()) {
            continue;  // modality absent, e.g. audio for nsec < 5
        }

        ExpertSequence seq;
        seq.modality = modality;
        seq.dim = dim;
        for (const auto& [beg, end] : spans) {
            ExpertToken tok;
            tok.beg_sec = beg;
            tok.end_sec = end;
            tok.vec.resize(dim);
            for (uint32_t i = 0; i < dim; ++i) {
                tok.vec[i] = static_cast<float>(base[i] + noise_level * rng.gaussian());
            }
            seq.tokens.push_back(std::move(tok));
        }
        fs.sequences.push_back(std::move(seq));
    }
    fs.validate();
    return fs;
}

VideoFeatureSet average_crop_embeddings(const std::vector<VideoFeatureSet>& crops) {
    if (crops.empty()) {
        throw ConfigError("average_crop_embeddings: empty crop list");
    }
    const VideoFeatureSet& first = crops[0];
    VideoFeatureSet out = first;
    for (size_t c = 1; c < crops.size(); ++c) {
        const VideoFeatureSet& fs = crops[c];
        if (fs.nsec != first.nsec || fs.sequences.size() != first.sequences.size()) {
            throw ShapeError("average_crop_embeddings: crop " + std::to_string(c) + " structure differs");
        }
        for (size_t s = 0; s < fs.sequences.size(); ++s) {
            const auto& a = first.sequences[s];
            const auto& b = fs.sequences[s];
            if (a.modality != b.modality || a.dim != b.dim || a.tokens.size() != b.tokens.size()) {
                throw ShapeError("average_crop_embeddings: crop " + std::to_string(c) + " structure differs in " +
                                 modality_name(a.modality));
            }
            for (size_t t = 0; t < a.tokens.size(); ++t) {
                if (a.tokens[t].beg_sec != b.tokens[t].beg_sec || a.tokens[t].end_sec != b.tokens[t].end_sec) {
                    throw ShapeError("average_crop_embeddings: crop spans differ in " +
                                     std::string(modality_name(a.modality)));
                }
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(crops.size());
    for (size_t s = 0; s < out.sequences.size(); ++s) {
        for (size_t t = 0; t < out.sequences[s].tokens.size(); ++t) {
            auto& vec = out.sequences[s].tokens[t].vec;
            for (size_t i = 0; i < vec.size(); ++i) {
                double acc = 0.0;
                for (const auto& crop : crops) {
                    acc += static_cast<double>(crop.sequences[s].tokens[t].vec[i]);
                }
                vec[i] = static_cast<float>(acc * inv);
            }
        }
    }
    return out;
}

VideoFeatureSet image_as_video(const std::string& id, const std::vector<float>& rgb_vec, uint32_t expected_dim) {
    if (expected_dim > 0 && rgb_vec.size() != expected_dim) {
        throw ShapeError("image_as_video: vector has " + std::to_string(rgb_vec.size()) +
                         " entries, configured rgb dim is " + std::to_string(expected_dim));
    }
    VideoFeatureSet fs;
    fs.video_id = id;
    fs.nsec = 1;
    ExpertSequence seq;
    seq.modality = Modality::rgb;
    seq.dim = static_cast<uint32_t>(rgb_vec.size());
    ExpertToken tok;
    tok.beg_sec = 0;
    tok.end_sec = 1;
    tok.vec = rgb_vec;
    seq.tokens.push_back(std::move(tok));
    fs.sequences.push_back(std::move(seq));
    fs.validate();
    return fs;
}

}  // namespace mmfuse
