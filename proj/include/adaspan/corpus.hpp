#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adaspan/config.hpp"

namespace adaspan {

// Token-id sequence with contiguous, disjoint train/dev/test splits.
// Text8 uses the fixed 27-symbol alphabet (space, a..z); Bytes maps raw
// bytes to ids 0..255; Synthetic corpora carry their own vocab size.
struct CharCorpus {
    struct Split {
        int64_t offset = 0;
        int64_t length = 0;
    };

    CorpusFormat format = CorpusFormat::Text8;
    int vocab = 27;
    std::vector<int32_t> data;
    Split train, dev, test;

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    std::span<const int32_t> split_tokens(const Split& s) const {
        return std::span<const int32_t>(data).subspan(static_cast<size_t>(s.offset), static_cast<size_t>(s.length));
    }
    std::string detokenize(std::span<const int32_t> toks) const;

    // 90/5/5 contiguous split of the full sequence.
    void set_default_splits();

    static CharCorpus load(const std::string& path, CorpusFormat format, int64_t limit = 0);
    static CharCorpus from_text(const std::string& text, CorpusFormat format);

    // Synthetic generators for behavioral tests.
    static CharCorpus synth_copy(int lag, int64_t length, int vocab, uint64_t seed);
    static CharCorpus synth_markov(int64_t length, int vocab, uint64_t seed);
    static CharCorpus synth_repeat(const std::vector<int32_t>& pattern, int64_t length, int vocab);

    // The row-stochastic transition matrix synth_markov draws from (row =
    // current token), exposed so tests can verify empirical frequencies.
    static std::vector<double> markov_matrix(int vocab, uint64_t seed);
};

// Deterministic block iterator: the split is cut into `batch` contiguous
// disjoint shards, and stream i walks shard i sequentially, block by block.
// Streams wrap at their shard end (an epoch boundary), which is flagged so
// the caller can reset layer caches.
class Batcher {
public:
    struct BlockBatch {
        // inputs[i] / targets[i]: block-length token slices for stream i,
        // targets shifted one position ahead.
        std::vector<std::span<const int32_t>> inputs;
        std::vector<std::span<const int32_t>> targets;
        std::vector<uint8_t> fresh;  // stream reset before this block
    };

    Batcher(const CharCorpus& corpus, CharCorpus::Split split, int batch, int block);

    BlockBatch next();
    int64_t shard_length() const { return shard_; }
    int64_t stream_start(int i) const { return split_.offset + static_cast<int64_t>(i) * shard_; }
    // Number of whole blocks one stream yields per epoch.
    int64_t blocks_per_epoch() const { return (shard_ - 1) / block_; }

private:
    const CharCorpus& corpus_;
    CharCorpus::Split split_;
    int batch_;
    int block_;
    int64_t shard_;
    std::vector<int64_t> pos_;
    std::vector<uint8_t> fresh_;
};

}  // namespace adaspan
