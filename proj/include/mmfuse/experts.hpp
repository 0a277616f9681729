#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/rng.hpp"

namespace mmfuse {

enum class Modality : uint8_t { rgb = 0, motion = 1, audio = 2 };

const char* modality_name(Modality m);
std::optional<Modality> modality_from_name(const std::string& name);

// One time-stamped feature vector. Spans are integer seconds, [beg, end).
struct ExpertToken {
    uint32_t beg_sec = 0;
    uint32_t end_sec = 0;
    std::vector<float> vec;  // float32 is the canonical expert precision
};

struct ExpertSequence {
    Modality modality = Modality::rgb;
    uint32_t dim = 0;
    std::vector<ExpertToken> tokens;
};

struct VideoFeatureSet {
    std::string video_id;
    uint32_t nsec = 0;
    std::vector<ExpertSequence> sequences;  // at most one per modality

    const ExpertSequence* find(Modality m) const;
    // Rejects invariant violations: duplicate modalities, bad dims, spans out
    // of [0, nsec], unsorted or overlapping spans, non-finite values.
    void validate() const;
};

// ---- file I/O ----------------------------------------------------------
// Binary format, little-endian: magic "MMFX", version u32, video-id
// (u32 len + bytes), nsec u32, modality count u8; per modality: tag u8,
// dim u32, token count u32; per token: beg u32, end u32, dim x float32.
// A line-oriented text mirror ("MMFXT") carries identical content for
// debugging; load_expert_file sniffs the magic.

VideoFeatureSet load_expert_file(const std::string& path);
void save_expert_file(const VideoFeatureSet& fs, const std::string& path);       // binary
void save_expert_file_text(const VideoFeatureSet& fs, const std::string& path);  // text mirror

// Drops tokens whose span ends beyond max_seconds and clamps nsec; returns
// how many tokens were dropped so callers can keep a warning counter.
// Positional tables only reach max_seconds, so longer videos are cut here at
// ingestion rather than rejected.
int64_t truncate_to_max_seconds(VideoFeatureSet& fs, uint32_t max_seconds);

// ---- synthetic experts -------------------------------------------------

struct SynthSpec {
    std::vector<std::pair<Modality, uint32_t>> modality_dims = {
        {Modality::rgb, 24}, {Modality::motion, 20}, {Modality::audio, 16}};
    uint32_t concept_dim = 24;
    uint32_t max_seconds = 32;
    // One motion token per second t spanning [t, min(t + motion_window, nsec)).
    uint32_t motion_window = 2;
    // Stretches every span by this factor while keeping token counts; used by
    // the positional-encoding ablation fixtures. 1 = the standard layout.
    uint32_t span_scale = 1;
    // Seed for the fixed per-modality projection matrices; one value per
    // corpus family so text and video sides stay aligned.
    uint64_t projection_seed = 1;
};

// Deterministic features for one synthetic video: rgb one token per second,
// audio one token per 5 seconds ([5k, 5k+5), so nsec < 5 has no audio),
// motion per SynthSpec. Vector = fixed modality projection of concept_vec
// plus Gaussian noise scaled by noise_level. base_nsec is pre-scaling;
// errors if base_nsec * span_scale exceeds max_seconds.
VideoFeatureSet synth_features(const SynthSpec& spec, uint64_t seed, const std::vector<double>& concept_vec,
                               uint32_t base_nsec, double noise_level, const std::string& video_id);

// The fixed projection matrix used by synth_features (dim x concept_dim),
// exposed so tests can reproduce expected vectors.
std::vector<double> modality_projection(const SynthSpec& spec, Modality m, uint32_t dim);

// Token-wise arithmetic mean across crop variants of the same video.
// All crops must share modality structure and spans exactly.
VideoFeatureSet average_crop_embeddings(const std::vector<VideoFeatureSet>& crops);

// Single rgb vector viewed as a one-frame video: one token spanning [0, 1).
// expected_dim > 0 enforces the configured rgb expert width.
VideoFeatureSet image_as_video(const std::string& id, const std::vector<float>& rgb_vec, uint32_t expected_dim = 0);

}  // namespace mmfuse
