#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "svll/autograd.hpp"

namespace svll {

/// Unit-norm embedding rows with an identity label per row.
template <typename T>
struct LabeledBatch {
    Value<T> emb;             // B x d
    std::vector<int> labels;  // size B
};

/// 2V rows ordered as V adjacent positive pairs (2k, 2k+1), plus the
/// softmax temperature.
template <typename T>
struct PairBatch {
    Value<T> emb;  // 2V x d
    T tau = T(0.07);
};

/// The scalar knobs shared by the stage objectives.
struct LossWeights {
    double lambda_lss = 0.8;  // language self-supervision weight
    double lambda_vss = 0.8;  // vision self-supervision weight
    double eps = 0.1;         // label-smoothing degree
};

namespace detail {

template <typename T>
void require_unit_rows(const Value<T>& emb, const char* who) {
    for (std::size_t r = 0; r < emb.rows(); ++r) {
        double n = 0;
        for (std::size_t c = 0; c < emb.cols(); ++c) {
            n += static_cast<double>(emb.val().at(r, c)) * static_cast<double>(emb.val().at(r, c));
        }
        if (std::abs(std::sqrt(n) - 1.0) > 1e-3) {
            throw std::invalid_argument(std::string(who) + ": row " + std::to_string(r) +
                                        " is not unit norm");
        }
    }
}

template <typename T>
void require_aligned(const LabeledBatch<T>& a, const LabeledBatch<T>& b, const char* who) {
    if (!a.emb || !b.emb || a.emb.rows() != a.labels.size() || b.emb.rows() != b.labels.size()) {
        throw std::invalid_argument(std::string(who) + ": embedding/label row mismatch");
    }
    if (a.labels != b.labels) throw std::invalid_argument(std::string(who) + ": label misalignment");
    require_unit_rows(a.emb, who);
    require_unit_rows(b.emb, who);
}

/// Positive-set weights: W[i][p] = 1/|P(y_i)| when labels match, else 0.
template <typename T>
Tensor<T> positive_weights(const std::vector<int>& labels) {
    const std::size_t B = labels.size();
    Tensor<T> w = Tensor<T>::matrix(B, B);
    for (std::size_t i = 0; i < B; ++i) {
        std::size_t cnt = 0;
        for (std::size_t p = 0; p < B; ++p) cnt += labels[p] == labels[i];
        for (std::size_t p = 0; p < B; ++p) {
            if (labels[p] == labels[i]) w.at(i, p) = T(1) / static_cast<T>(cnt);
        }
    }
    return w;
}

}  // namespace detail

/// Text-to-image contrastive loss. Per anchor i: the positives' image
/// features are paired with anchor text i in the numerator, while the
/// denominator sums anchor image i against every text. Using the positive
/// weights this collapses to  mean_i [ lse_k(I_i.T_k) - (1/|P|) sum_p I_p.T_i ].
template <typename T>
Value<T> loss_t2i(const LabeledBatch<T>& text, const LabeledBatch<T>& image) {
    detail::require_aligned(text, image, "loss_t2i");
    const std::size_t B = text.labels.size();
    auto S = matmul(image.emb, transpose(text.emb));  // S[a][b] = I_a . T_b
    auto W = constant(detail::positive_weights<T>(text.labels), "positive_weights");
    auto pos = row_sum(mul(transpose(S), W));  // entry i: (1/|P|) sum_p S[p][i]
    return scale(sum_all(sub(row_lse(S), pos)), T(1) / static_cast<T>(B));
}

/// Image-to-text mirror: numerator pairs anchor image i with its positive
/// texts, denominator sums every image against anchor text i.
template <typename T>
Value<T> loss_i2t(const LabeledBatch<T>& image, const LabeledBatch<T>& text) {
    detail::require_aligned(image, text, "loss_i2t");
    const std::size_t B = image.labels.size();
    auto S = matmul(image.emb, transpose(text.emb));
    auto W = constant(detail::positive_weights<T>(image.labels), "positive_weights");
    auto pos = row_sum(mul(S, W));  // entry i: (1/|P|) sum_p S[i][p]
    return scale(sum_all(sub(row_lse(transpose(S)), pos)), T(1) / static_cast<T>(B));
}

/// The label-smoothed target distribution: (1-eps) on the true class plus
/// eps/N spread over all N classes. Rows sum to 1 for any eps in [0,1).
template <typename T>
Tensor<T> smoothing_targets(const std::vector<int>& labels, std::size_t n_classes, double eps) {
    if (eps < 0.0 || eps >= 1.0) throw std::invalid_argument("smoothing_targets: eps outside [0,1)");
    Tensor<T> q = Tensor<T>::matrix(labels.size(), n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
            throw std::out_of_range("smoothing_targets: label " + std::to_string(labels[i]) +
                                    " outside 0.." + std::to_string(n_classes - 1));
        }
        for (std::size_t a = 0; a < n_classes; ++a) {
            q.at(i, a) = (static_cast<int>(a) == labels[i] ? T(1) - static_cast<T>(eps) : T(0)) +
                         static_cast<T>(eps) / static_cast<T>(n_classes);
        }
    }
    return q;
}

/// Smoothed cross entropy over raw logits:  mean_i [ lse(logits_i) - q_i . logits_i ].
template <typename T>
Value<T> smoothed_ce(Value<T> logits, const std::vector<int>& labels, double eps) {
    if (logits.rows() != labels.size()) throw std::invalid_argument("smoothed_ce: logit/label mismatch");
    auto q = constant(smoothing_targets<T>(labels, logits.cols(), eps), "smoothing_targets");
    auto target = row_sum(mul(logits, q));
    return scale(sum_all(sub(row_lse(logits), target)), T(1) / static_cast<T>(labels.size()));
}

/// Identity classification through the per-identity text features: image
/// embeddings score against all N id text features, then smoothed CE.
template <typename T>
Value<T> loss_i2tce(const LabeledBatch<T>& image, Value<T> id_text, double eps) {
    if (!image.emb || image.emb.rows() != image.labels.size()) {
        throw std::invalid_argument("loss_i2tce: embedding/label row mismatch");
    }
    detail::require_unit_rows(image.emb, "loss_i2tce");
    detail::require_unit_rows(id_text, "loss_i2tce(id_text)");
    return smoothed_ce(matmul(image.emb, transpose(id_text)), image.labels, eps);
}

/// Identity loss over a learned classifier head's logits.
template <typename T>
Value<T> loss_id(Value<T> logits, const std::vector<int>& labels, double eps) {
    return smoothed_ce(logits, labels, eps);
}

/// Pairwise self-supervised loss: for each of the 2V anchors, the softmax
/// of its positive over all non-anchor rows, cosine similarities over tau.
/// The anchor itself is excluded from the denominator by pushing its
/// diagonal entry to -1e30 before the log-sum-exp (exp underflows to zero).
template <typename T>
Value<T> loss_ntxent(const PairBatch<T>& pairs) {
    if (!(pairs.tau > T(0))) throw std::invalid_argument("loss_ntxent: tau must be positive");
    if (!pairs.emb || pairs.emb.rows() % 2 != 0 || pairs.emb.rows() == 0) {
        throw std::invalid_argument("loss_ntxent: need a positive even row count");
    }
    const std::size_t n = pairs.emb.rows();
    auto u = l2norm_rows(pairs.emb);
    auto sims = scale(matmul(u, transpose(u)), T(1) / pairs.tau);

    Tensor<T> self_block = Tensor<T>::matrix(n, n);
    Tensor<T> pos_pick = Tensor<T>::matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        self_block.at(i, i) = T(-1e30);
        pos_pick.at(i, i ^ 1) = T(1);
    }
    auto masked = add(sims, constant(std::move(self_block), "self_block"));
    auto pos = row_sum(mul(masked, constant(std::move(pos_pick), "pos_pick")));
    return scale(sum_all(sub(row_lse(masked), pos)), T(1) / static_cast<T>(n));
}

/// Batch-hard triplet on Euclidean distances of unit embeddings: per
/// anchor, farthest positive minus nearest negative plus margin, hinged.
template <typename T>
Value<T> loss_triplet(const LabeledBatch<T>& batch, T margin) {
    if (!batch.emb || batch.emb.rows() != batch.labels.size()) {
        throw std::invalid_argument("loss_triplet: embedding/label row mismatch");
    }
    detail::require_unit_rows(batch.emb, "loss_triplet");
    const std::size_t B = batch.labels.size();
    Tensor<T> pos_mask = Tensor<T>::matrix(B, B);
    Tensor<T> neg_mask = Tensor<T>::matrix(B, B);
    bool two_ids = false;
    for (std::size_t i = 0; i < B; ++i) {
        std::size_t same = 0;
        for (std::size_t j = 0; j < B; ++j) {
            if (batch.labels[i] == batch.labels[j]) {
                pos_mask.at(i, j) = T(1);
                ++same;
            } else {
                neg_mask.at(i, j) = T(1);
                two_ids = true;
            }
        }
        if (same < 2) {
            throw std::invalid_argument("loss_triplet: identity " + std::to_string(batch.labels[i]) +
                                        " has fewer than 2 rows");
        }
    }
    if (!two_ids) throw std::invalid_argument("loss_triplet: need at least 2 identities");

    // |u - v|^2 = 2 - 2 u.v for unit rows
    auto S = matmul(batch.emb, transpose(batch.emb));
    auto D = sqrt_op(add(scale(S, T(-2)), constant(Tensor<T>::full({B, B}, T(2)), "two")));
    auto hardest_pos = masked_row_max(D, pos_mask);
    auto hardest_neg = masked_row_min(D, neg_mask);
    auto hinge = relu(add(sub(hardest_pos, hardest_neg), constant(Tensor<T>::full({B, 1}, margin), "margin")));
    return scale(sum_all(hinge), T(1) / static_cast<T>(B));
}

/// Stage-1 objective: contrastive terms plus weighted language
/// self-supervision. A zero weight recovers the prompt-learning baseline.
template <typename T>
Value<T> stage1_total(Value<T> t2i, Value<T> i2t, Value<T> lss, T lambda_lss) {
    return add(add(t2i, i2t), scale(lss, lambda_lss));
}

/// Stage-2 objective: classification + metric terms plus weighted vision
/// self-supervision. A zero weight recovers the fine-tuning baseline.
template <typename T>
Value<T> stage2_total(Value<T> i2tce, Value<T> id, Value<T> tri, Value<T> vss, T lambda_vss) {
    return add(add(add(i2tce, id), tri), scale(vss, lambda_vss));
}

}  // namespace svll
