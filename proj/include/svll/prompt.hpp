#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "svll/autograd.hpp"
#include "svll/rng.hpp"
#include "svll/vocab.hpp"

namespace svll {

/// Fixed token sequence "<sos> prefix... M slots ... suffix <eos>" with the
/// positions at which an identity's learnable vectors are spliced in.
struct PromptTemplate {
    std::vector<int> ids;
    std::vector<std::size_t> slot_pos;  // contiguous run inside ids
    std::size_t eos_pos = 0;

    std::size_t length() const { return ids.size(); }
    std::size_t slots() const { return slot_pos.size(); }

    /// Whitespace-tokenized template halves, e.g. ("a photo of a", "person").
    /// Slot-marker tokens <slot1>..<slotM> are registered in the vocabulary.
    static PromptTemplate build(Vocabulary& vocab, const std::string& prefix, const std::string& suffix,
                                std::size_t m) {
        if (m == 0) throw std::invalid_argument("prompt template: need at least one slot");
        PromptTemplate t;
        t.ids.push_back(Vocabulary::kSos);
        for (const auto& w : split_words(prefix)) t.ids.push_back(vocab.add(w));
        for (std::size_t j = 0; j < m; ++j) {
            t.slot_pos.push_back(t.ids.size());
            t.ids.push_back(vocab.add("<slot" + std::to_string(j + 1) + ">"));
        }
        for (const auto& w : split_words(suffix)) t.ids.push_back(vocab.add(w));
        t.eos_pos = t.ids.size();
        t.ids.push_back(Vocabulary::kEos);
        return t;
    }

   private:
    static std::vector<std::string> split_words(const std::string& s) {
        std::istringstream is(s);
        std::vector<std::string> out;
        std::string w;
        while (is >> w) out.push_back(w);
        return out;
    }
};

/// The learnable per-identity token vectors: N identities x M slots x d_word.
/// The only trainable state of training stage 1; bitwise frozen afterwards.
template <typename T>
struct PromptBank {
    std::size_t n_identities = 0;
    std::size_t m_tokens = 0;
    std::size_t d_word = 0;
    Parameter<T> tokens;

    PromptBank() = default;

    PromptBank(std::size_t n, std::size_t m, std::size_t d, Rng& rng, T stddev = T(0.02))
        : n_identities(n), m_tokens(m), d_word(d), tokens("prompt_bank", Tensor<T>({n, m, d})) {
        for (auto& v : tokens.value.data) v = static_cast<T>(rng.normal()) * stddev;
    }

    /// Bank viewed as an (N*M) x d_word graph leaf; row id*M + j holds the
    /// j-th slot vector of that identity.
    Value<T> matrix() { return leaf(tokens, n_identities * m_tokens, d_word); }
};

/// A prompt already in embedding space: rows of d_word vectors ready for the
/// text encoder, plus enough assembly context to derive masked variants.
template <typename T>
struct EmbeddedPrompt {
    Value<T> seq;  // length x d_word
    std::size_t identity = 0;
    std::size_t eos_pos = 0;
    std::vector<std::size_t> slot_pos;
    std::vector<std::size_t> mask_pattern;  // masked sequence positions, ascending

    // assembly context (graph views shared with seq)
    Value<T> prefix_part, suffix_part, bank_mat, word_mat;
};

/// Splice identity's bank vectors into the template. `bank_mat` is the
/// (N*M) x d_word bank view, `word_mat` the vocab x d_word embedding table.
template <typename T>
EmbeddedPrompt<T> assemble_prompt(const PromptTemplate& t, std::size_t identity, Value<T> bank_mat,
                                  Value<T> word_mat) {
    const std::size_t m = t.slots();
    if ((identity + 1) * m > bank_mat.rows()) {
        throw std::out_of_range("assemble_prompt: unknown identity " + std::to_string(identity));
    }
    const std::size_t first = t.slot_pos.front();
    const std::size_t last = t.slot_pos.back();

    std::vector<std::size_t> pre_ids, suf_ids, slot_rows;
    for (std::size_t i = 0; i < first; ++i) pre_ids.push_back(static_cast<std::size_t>(t.ids[i]));
    for (std::size_t i = last + 1; i < t.ids.size(); ++i) suf_ids.push_back(static_cast<std::size_t>(t.ids[i]));
    for (std::size_t j = 0; j < m; ++j) slot_rows.push_back(identity * m + j);

    EmbeddedPrompt<T> p;
    p.identity = identity;
    p.eos_pos = t.eos_pos;
    p.slot_pos = t.slot_pos;
    p.bank_mat = bank_mat;
    p.word_mat = word_mat;
    p.prefix_part = gather_rows(word_mat, std::move(pre_ids));
    p.suffix_part = gather_rows(word_mat, std::move(suf_ids));
    p.seq = concat_rows<T>({p.prefix_part, gather_rows(bank_mat, std::move(slot_rows)), p.suffix_part});
    return p;
}

/// Replace floor(alpha*M) slot vectors, chosen uniformly without
/// replacement, by the fixed <mask> embedding. Template tokens are never
/// touched; gradient flows through the surviving slots only (masked slots
/// simply drop out of the rebuilt graph).
template <typename T>
EmbeddedPrompt<T> mask_prompt(const EmbeddedPrompt<T>& p, double alpha, Rng& rng) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("mask_prompt: alpha outside [0,1]");
    const std::size_t m = p.slot_pos.size();
    const std::size_t k = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(m)));

    EmbeddedPrompt<T> out = p;
    out.mask_pattern.clear();
    if (k == 0) return out;  // bitwise identity, nothing rebuilt

    std::vector<std::size_t> pick(m);
    std::iota(pick.begin(), pick.end(), std::size_t(0));
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.index(m - i);
        std::swap(pick[i], pick[j]);
    }
    std::vector<bool> masked(m, false);
    for (std::size_t i = 0; i < k; ++i) masked[pick[i]] = true;

    std::vector<Value<T>> parts;
    parts.reserve(m + 2);
    parts.push_back(p.prefix_part);
    for (std::size_t j = 0; j < m; ++j) {
        if (masked[j]) {
            parts.push_back(gather_rows(p.word_mat, {static_cast<std::size_t>(Vocabulary::kMask)}));
            out.mask_pattern.push_back(p.slot_pos[j]);
        } else {
            parts.push_back(gather_rows(p.bank_mat, {p.identity * m + j}));
        }
    }
    parts.push_back(p.suffix_part);
    out.seq = concat_rows(parts);
    return out;
}

}  // namespace svll
