#include "adaspan/corpus.hpp"

#include <fstream>
#include <random>
#include <stdexcept>

namespace adaspan {

namespace {

// Fixed text8 alphabet: id 0 = space, 1..26 = a..z.
int32_t text8_id(char c) {
    if (c == ' ') return 0;
    if (c >= 'a' && c <= 'z') return c - 'a' + 1;
    return -1;
}

char text8_char(int32_t id) { return id == 0 ? ' ' : static_cast<char>('a' + id - 1); }

CharCorpus tokenize(const std::string& text, CorpusFormat format) {
    CharCorpus c;
    c.format = format;
    c.data.reserve(text.size());
    if (format == CorpusFormat::Text8) {
        c.vocab = 27;
        for (size_t i = 0; i < text.size(); ++i) {
            const int32_t id = text8_id(text[i]);
            if (id < 0)
                throw std::runtime_error("corpus: unknown text8 symbol 0x" + std::to_string(static_cast<unsigned char>(text[i])) +
                                         " at offset " + std::to_string(i));
            c.data.push_back(id);
        }
    } else if (format == CorpusFormat::Bytes) {
        c.vocab = 256;
        for (char ch : text) c.data.push_back(static_cast<int32_t>(static_cast<unsigned char>(ch)));
    } else {
        throw std::invalid_argument("corpus: cannot tokenize into a synthetic corpus");
    }
    c.set_default_splits();
    return c;
}

}  // namespace

std::string CharCorpus::detokenize(std::span<const int32_t> toks) const {
    std::string out;
    out.reserve(toks.size());
    for (int32_t id : toks) {
        if (format == CorpusFormat::Text8) out.push_back(text8_char(id));
        else if (format == CorpusFormat::Bytes) out.push_back(static_cast<char>(id));
        else out.push_back(static_cast<char>('a' + id % 26));  // synthetic: readable best effort
    }
    return out;
}

void CharCorpus::set_default_splits() {
    const int64_t n = size();
    train.offset = 0;
    train.length = n * 9 / 10;
    dev.offset = train.length;
    dev.length = n / 20;
    test.offset = dev.offset + dev.length;
    test.length = n - test.offset;
}

CharCorpus CharCorpus::load(const std::string& path, CorpusFormat format, int64_t limit) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("corpus: cannot open " + path);
    std::string text;
    if (limit > 0) {
        text.resize(static_cast<size_t>(limit));
        in.read(text.data(), limit);
        text.resize(static_cast<size_t>(in.gcount()));
    } else {
        text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    return tokenize(text, format);
}

CharCorpus CharCorpus::from_text(const std::string& text, CorpusFormat format) { return tokenize(text, format); }

CharCorpus CharCorpus::synth_copy(int lag, int64_t length, int vocab, uint64_t seed) {
    if (lag < 1 || lag >= length) throw std::invalid_argument("synth_copy: lag must be in [1, length)");
    CharCorpus c;
    c.format = CorpusFormat::Synthetic;
    c.vocab = vocab;
    c.data.resize(static_cast<size_t>(length));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int32_t> uni(0, vocab - 1);
    for (int64_t t = 0; t < length; ++t)
        c.data[static_cast<size_t>(t)] = t < lag ? uni(rng) : c.data[static_cast<size_t>(t - lag)];
    c.set_default_splits();
    return c;
}

std::vector<double> CharCorpus::markov_matrix(int vocab, uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> uni(0.05, 1.0);
    std::vector<double> m(static_cast<size_t>(vocab) * vocab);
    for (int i = 0; i < vocab; ++i) {
        double rowsum = 0.0;
        for (int j = 0; j < vocab; ++j) {
            const double w = uni(rng);
            m[static_cast<size_t>(i) * vocab + j] = w;
            rowsum += w;
        }
        for (int j = 0; j < vocab; ++j) m[static_cast<size_t>(i) * vocab + j] /= rowsum;
    }
    return m;
}

CharCorpus CharCorpus::synth_markov(int64_t length, int vocab, uint64_t seed) {
    if (length < 1) throw std::invalid_argument("synth_markov: length must be >= 1");
    CharCorpus c;
    c.format = CorpusFormat::Synthetic;
    c.vocab = vocab;
    c.data.resize(static_cast<size_t>(length));
    const auto m = markov_matrix(vocab, seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::uniform_int_distribution<int32_t> first(0, vocab - 1);
    int32_t cur = first(rng);
    c.data[0] = cur;
    for (int64_t t = 1; t < length; ++t) {
        const double u = uni(rng);
        double acc = 0.0;
        int32_t nxt = vocab - 1;
        for (int j = 0; j < vocab; ++j) {
            acc += m[static_cast<size_t>(cur) * vocab + j];
            if (u < acc) {
                nxt = j;
                break;
            }
        }
        c.data[static_cast<size_t>(t)] = nxt;
        cur = nxt;
    }
    c.set_default_splits();
    return c;
}

CharCorpus CharCorpus::synth_repeat(const std::vector<int32_t>& pattern, int64_t length, int vocab) {
    if (pattern.empty()) throw std::invalid_argument("synth_repeat: empty pattern");
    CharCorpus c;
    c.format = CorpusFormat::Synthetic;
    c.vocab = vocab;
    c.data.resize(static_cast<size_t>(length));
    for (int64_t t = 0; t < length; ++t) c.data[static_cast<size_t>(t)] = pattern[static_cast<size_t>(t) % pattern.size()];
    c.set_default_splits();
    return c;
}

Batcher::Batcher(const CharCorpus& corpus, CharCorpus::Split split, int batch, int block)
    : corpus_(corpus), split_(split), batch_(batch), block_(block) {
    if (batch < 1 || block < 1) throw std::invalid_argument("batcher: batch and block must be >= 1");
    shard_ = split.length / batch;
    if (shard_ < static_cast<int64_t>(block) + 1)
        throw std::invalid_argument("batcher: split too small for batch x block (need >= batch*(block+1) tokens)");
    pos_.assign(static_cast<size_t>(batch), 0);
    fresh_.assign(static_cast<size_t>(batch), 1);
}

Batcher::BlockBatch Batcher::next() {
    BlockBatch out;
    out.inputs.resize(static_cast<size_t>(batch_));
    out.targets.resize(static_cast<size_t>(batch_));
    out.fresh.resize(static_cast<size_t>(batch_));
    std::span<const int32_t> all(corpus_.data);
    for (int i = 0; i < batch_; ++i) {
        auto& p = pos_[static_cast<size_t>(i)];
        if (p + block_ + 1 > shard_) {  // epoch boundary: wrap and reset cache
            p = 0;
            fresh_[static_cast<size_t>(i)] = 1;
        }
        const int64_t base = stream_start(i) + p;
        out.inputs[static_cast<size_t>(i)] = all.subspan(static_cast<size_t>(base), static_cast<size_t>(block_));
        out.targets[static_cast<size_t>(i)] = all.subspan(static_cast<size_t>(base + 1), static_cast<size_t>(block_));
        out.fresh[static_cast<size_t>(i)] = fresh_[static_cast<size_t>(i)];
        fresh_[static_cast<size_t>(i)] = 0;
        p += block_;
    }
    return out;
}

}  // namespace adaspan
