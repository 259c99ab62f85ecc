#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tlm/checkpoint.hpp"
#include "tlm/corpus.hpp"
#include "tlm/model.hpp"
#include "tlm/ops.hpp"
#include "tlm/rng.hpp"

namespace tlm {

constexpr double kMaskProb = 0.15;
constexpr double kMaskReplaceProb = 0.80;   // of selected: -> [MASK]
constexpr double kMaskRandomProb = 0.10;    // of selected: -> random token
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr uint64_t kFreezeEpochs = 50;      // LR decay stops here

struct TrainConfig {
    uint64_t epochs = 50;
    size_t batch_size = 32;
    double eta = 1e-4;    // peak learning rate
    double alpha = 0.01;  // decoupled weight decay
    uint64_t seed = 42;
    uint64_t patience = 10;  // fine-tune early stopping (0 = off)

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (!(eta > 0.0)) throw std::invalid_argument("TrainConfig: eta must be > 0");
        if (alpha < 0.0) throw std::invalid_argument("TrainConfig: alpha must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear decay from eta0 that freezes after the
// 50-epoch mark. eta(t) = eta0 * max(0, 1 - min(t, F)/T) with T the total
// planned steps and F the step count of 50 epochs, so a 50-epoch run decays
// to zero and a 100-epoch run holds eta0/2 from the halfway point on.
// ---------------------------------------------------------------------------

struct LrSchedule {
    double eta0 = 0.0;
    uint64_t total_steps = 1;
    uint64_t freeze_steps = 1;

    double at(uint64_t t) const {
        const uint64_t tc = std::min(t, freeze_steps);
        const double f = 1.0 - static_cast<double>(tc) / static_cast<double>(total_steps);
        return eta0 * std::max(0.0, f);
    }
};

inline LrSchedule make_lr_schedule(double eta0, uint64_t epochs, uint64_t steps_per_epoch) {
    if (epochs < 1 || steps_per_epoch < 1)
        throw std::invalid_argument("make_lr_schedule: epochs and steps_per_epoch must be >= 1");
    LrSchedule s;
    s.eta0 = eta0;
    s.total_steps = epochs * steps_per_epoch;
    s.freeze_steps = kFreezeEpochs * steps_per_epoch;
    return s;
}

// ---------------------------------------------------------------------------
// MLM masking. Each real, non-special position is selected independently
// with probability 0.15; a selected position becomes [MASK] (80%), a random
// non-special token (10%) or stays unchanged (10%). Labels carry the
// original id at selected positions and kIgnoreLabel elsewhere.
// ---------------------------------------------------------------------------

struct MaskedBatch {
    Batch batch;                  // ids after corruption
    std::vector<int32_t> labels;  // original ids at selected positions, else ignore
    size_t n_selected = 0;
};

inline MaskedBatch mask_batch(const Batch& input, const std::array<int32_t, 5>& special_ids,
                              int32_t mask_id, size_t vocab_size, Rng& rng) {
    input.validate();
    const auto is_special = [&](int32_t id) {
        return std::find(special_ids.begin(), special_ids.end(), id) != special_ids.end();
    };
    MaskedBatch out;
    out.batch = input;
    out.labels.assign(input.ids.size(), ops::kIgnoreLabel);
    for (size_t i = 0; i < input.ids.size(); ++i) {
        const int32_t id = input.ids[i];
        if (!input.mask[i] || is_special(id)) continue;
        if (!rng.next_bernoulli(kMaskProb)) continue;
        out.labels[i] = id;
        ++out.n_selected;
        const double u = rng.next_double();
        if (u < kMaskReplaceProb) {
            out.batch.ids[i] = mask_id;
        } else if (u < kMaskReplaceProb + kMaskRandomProb) {
            int32_t r;
            do {
                r = static_cast<int32_t>(rng.next_below(vocab_size));
            } while (is_special(r));
            out.batch.ids[i] = r;
        }  // else: keep the original token
    }
    return out;
}

// ---------------------------------------------------------------------------
// AdamW: bias-corrected Adam moments plus decoupled weight decay. Decay is
// skipped for biases and norm parameters. With alpha = 0 the update is
// plain Adam, bit for bit.
// ---------------------------------------------------------------------------

template <typename T>
struct AdamWState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    uint64_t t = 0;  // completed steps

    template <typename ModelT>
    static AdamWState init(const ModelT& model) {
        AdamWState st;
        st.m.reserve(model.params().size());
        st.v.reserve(model.params().size());
        for (const auto& p : model.params()) {
            st.m.emplace_back(p.tensor.shape, T(0));
            st.v.emplace_back(p.tensor.shape, T(0));
        }
        return st;
    }
};

/// One optimizer step over every model parameter. Gradients are read from
/// the pass's graph; a non-finite gradient aborts the step untouched.
template <typename T>
void adamw_step(Model<T>& model, ForwardPass<T>& fp, AdamWState<T>& st, double eta_t, double alpha) {
    auto& params = model.params();
    if (st.m.size() != params.size())
        throw std::invalid_argument("adamw_step: optimizer state does not match the model");
    Graph<T>& g = fp.graph();
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor<T>& grad = g.grad_ref(fp.param_var(i).index());
        for (T gv : grad.data)
            if (!std::isfinite(static_cast<double>(gv)))
                throw NumericError("non-finite gradient for parameter '" + params[i].name + "'");
    }
    const uint64_t t = ++st.t;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& w = params[i].tensor;
        const Tensor<T>& grad = g.grad_ref(fp.param_var(i).index());
        Tensor<T>& m = st.m[i];
        Tensor<T>& v = st.v[i];
        const bool decay = params[i].decay && alpha != 0.0;
        for (size_t j = 0; j < w.size(); ++j) {
            const double gj = static_cast<double>(grad.data[j]);
            const double mj = kAdamBeta1 * static_cast<double>(m.data[j]) + (1.0 - kAdamBeta1) * gj;
            const double vj = kAdamBeta2 * static_cast<double>(v.data[j]) + (1.0 - kAdamBeta2) * gj * gj;
            m.data[j] = static_cast<T>(mj);
            v.data[j] = static_cast<T>(vj);
            double upd = eta_t * (mj / bc1) / (std::sqrt(vj / bc2) + kAdamEps);
            if (decay) upd += eta_t * alpha * static_cast<double>(w.data[j]);
            w.data[j] = static_cast<T>(static_cast<double>(w.data[j]) - upd);
        }
    }
}

// ---------------------------------------------------------------------------
// Pre-training.
// ---------------------------------------------------------------------------

template <typename T>
struct PretrainResult {
    Model<T> model;
    std::vector<double> epoch_loss;  // mean masked-token CE per epoch
    TrainMeta meta;
};

/// Encode texts once at the model's sequence length, remapped through the
/// vocabulary map ([UNK] for tokens outside a reduced vocabulary).
inline std::vector<EncodedSeq> encode_texts(const std::vector<std::string>& texts, const Vocab& vocab,
                                            const VocabMap& vmap, size_t seq_len) {
    std::vector<EncodedSeq> out;
    out.reserve(texts.size());
    for (const std::string& t : texts) {
        EncodedSeq e = encode_len(t, vocab, seq_len);
        for (int32_t& id : e.ids) id = vmap.remap(id);
        out.push_back(std::move(e));
    }
    return out;
}

inline Batch gather_batch(const std::vector<EncodedSeq>& seqs, const std::vector<size_t>& order,
                          size_t begin, size_t end) {
    Batch b;
    b.bsz = end - begin;
    b.seq = seqs[order[begin]].ids.size();
    b.ids.reserve(b.bsz * b.seq);
    b.mask.reserve(b.bsz * b.seq);
    for (size_t i = begin; i < end; ++i) {
        const EncodedSeq& e = seqs[order[i]];
        b.ids.insert(b.ids.end(), e.ids.begin(), e.ids.end());
        b.mask.insert(b.mask.end(), e.attention_mask.begin(), e.attention_mask.end());
    }
    return b;
}

template <typename T>
PretrainResult<T> pretrain(const Corpus& corpus, const CorpusSubset& subset, const ModelConfig& cfg,
                           const TrainConfig& tc, const Vocab& vocab, const VocabMap& vmap) {
    tc.validate();
    if (subset.indices.empty()) throw DataError("pretrain: the corpus subset is empty");
    if (cfg.vocab_size != vmap.sub_size())
        throw std::invalid_argument("pretrain: model vocab_size != vocabulary map size");

    std::vector<std::string> texts;
    texts.reserve(subset.indices.size());
    for (size_t idx : subset.indices) texts.push_back(corpus.paragraphs.at(idx).text);
    const std::vector<EncodedSeq> encoded = encode_texts(texts, vocab, vmap, cfg.max_positions);

    PretrainResult<T> res{Model<T>(cfg, tc.seed), {}, {}};
    AdamWState<T> st = AdamWState<T>::init(res.model);
    const size_t n = encoded.size();
    const uint64_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
    const LrSchedule sched = make_lr_schedule(tc.eta, tc.epochs, steps_per_epoch);

    Rng base(tc.seed);
    Rng shuffle_rng = base.fork(1);
    Rng mask_rng = base.fork(2);
    Rng dropout_rng = base.fork(3);

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    uint64_t step = 0;
    for (uint64_t epoch = 0; epoch < tc.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        size_t token_count = 0;
        for (size_t begin = 0; begin < n; begin += tc.batch_size) {
            const size_t end = std::min(n, begin + tc.batch_size);
            const double eta_t = sched.at(step);
            ++step;
            const Batch raw = gather_batch(encoded, order, begin, end);
            const MaskedBatch mb =
                mask_batch(raw, vmap.special_subs, vmap.special_subs[4], cfg.vocab_size, mask_rng);
            if (mb.n_selected == 0) continue;

            Graph<T> g;
            ForwardPass<T> fp(res.model, g, true, &dropout_rng);
            Var<T> logits = fp.mlm_logits(mb.batch);
            Var<T> flat = ops::reshape(logits, {mb.batch.bsz * mb.batch.seq, cfg.vocab_size});
            auto ce = ops::masked_cross_entropy(flat, mb.labels);
            loss_sum += static_cast<double>(ce.loss.value().data[0]) * static_cast<double>(ce.active);
            token_count += ce.active;
            g.backward(ce.loss);
            adamw_step(res.model, fp, st, eta_t, tc.alpha);
        }
        res.epoch_loss.push_back(token_count ? loss_sum / static_cast<double>(token_count) : 0.0);
    }

    res.meta.epochs = tc.epochs;
    res.meta.eta = tc.eta;
    res.meta.alpha = tc.alpha;
    res.meta.seed = tc.seed;
    res.meta.subset_hash = subset_manifest_hash(subset);
    if (vmap.sub_size() != vocab.size()) res.meta.sub_vocab = vmap.sub_to_full;
    return res;
}

// ---------------------------------------------------------------------------
// Classification: evaluation and fine-tuning.
// ---------------------------------------------------------------------------

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> per_label_accuracy;
    std::vector<size_t> per_label_total;
    std::vector<int32_t> predictions;
};

/// Argmax with ties resolved toward the lowest label id.
inline int32_t argmax_label(const double* row, size_t n_labels) {
    size_t best = 0;
    for (size_t l = 1; l < n_labels; ++l)
        if (row[l] > row[best]) best = l;
    return static_cast<int32_t>(best);
}

/// Raw label logits for a list of encoded instances, eval mode (no dropout).
template <typename T>
Tensor<double> classify_all(Model<T>& model, const std::vector<EncodedSeq>& encoded,
                            size_t batch_size) {
    const size_t n = encoded.size();
    const size_t n_labels = model.config().num_labels;
    Tensor<double> logits({n, n_labels});
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    for (size_t begin = 0; begin < n; begin += batch_size) {
        const size_t end = std::min(n, begin + batch_size);
        Graph<T> g;
        ForwardPass<T> fp(model, g);
        const Batch b = gather_batch(encoded, order, begin, end);
        const Tensor<T>& out = fp.classify_logits(b).value();
        for (size_t i = begin; i < end; ++i)
            for (size_t l = 0; l < n_labels; ++l)
                logits.data[i * n_labels + l] = static_cast<double>(out.data[(i - begin) * n_labels + l]);
    }
    return logits;
}

template <typename T>
EvalResult evaluate(Model<T>& model, const std::vector<Instance>& test, const Vocab& vocab,
                    const VocabMap& vmap, size_t batch_size = 32) {
    if (test.empty()) throw DataError("evaluate: the test split is empty");
    const size_t n_labels = model.config().num_labels;
    std::vector<std::string> texts;
    texts.reserve(test.size());
    for (const Instance& ins : test) texts.push_back(ins.text);
    const std::vector<EncodedSeq> encoded = encode_texts(texts, vocab, vmap, model.config().max_positions);
    const Tensor<double> logits = classify_all(model, encoded, batch_size);

    EvalResult res;
    res.per_label_accuracy.assign(n_labels, 0.0);
    res.per_label_total.assign(n_labels, 0);
    std::vector<size_t> per_label_hit(n_labels, 0);
    res.predictions.resize(test.size());
    size_t hits = 0;
    for (size_t i = 0; i < test.size(); ++i) {
        const int32_t label = test[i].label;
        if (label < 0 || static_cast<size_t>(label) >= n_labels)
            throw DataError("evaluate: label " + std::to_string(label) + " out of range");
        const int32_t pred = argmax_label(&logits.data[i * n_labels], n_labels);
        res.predictions[i] = pred;
        ++res.per_label_total[static_cast<size_t>(label)];
        if (pred == label) {
            ++hits;
            ++per_label_hit[static_cast<size_t>(label)];
        }
    }
    res.accuracy = static_cast<double>(hits) / static_cast<double>(test.size());
    for (size_t l = 0; l < n_labels; ++l)
        res.per_label_accuracy[l] = res.per_label_total[l]
                                        ? static_cast<double>(per_label_hit[l]) /
                                              static_cast<double>(res.per_label_total[l])
                                        : 0.0;
    return res;
}

template <typename T>
struct FinetuneResult {
    Model<T> model;  // parameters of the best epoch
    double best_accuracy = 0.0;
    uint64_t best_epoch = 0;  // 1-based
    uint64_t epochs_run = 0;
    EvalResult best_eval;
    std::vector<double> epoch_loss;
};

/// Fine-tune a classifier. The encoder starts from `encoder` when given
/// (classifier head stays fresh), otherwise everything is freshly
/// initialized from the training seed. All parameters train. Returns the
/// model and test accuracy of the best epoch; stops early after `patience`
/// epochs without improvement.
template <typename T>
FinetuneResult<T> finetune(const ClassificationDataset& data, const ModelConfig& cfg,
                           const TrainConfig& tc, const Vocab& vocab, const VocabMap& vmap,
                           const LoadedCheckpoint<T>* encoder = nullptr) {
    tc.validate();
    if (data.train.empty()) throw DataError("finetune: the training split is empty");
    if (data.test.empty()) throw DataError("finetune: the test split is empty");
    if (cfg.num_labels != static_cast<size_t>(data.n_labels))
        throw std::invalid_argument("finetune: model num_labels != dataset labels");
    if (cfg.vocab_size != vmap.sub_size())
        throw std::invalid_argument("finetune: model vocab_size != vocabulary map size");

    FinetuneResult<T> res{Model<T>(cfg, tc.seed), 0.0, 0, 0, {}, {}};
    if (encoder != nullptr) load_encoder(res.model, *encoder);
    Model<T> current = res.model;

    std::vector<std::string> texts;
    std::vector<int32_t> labels;
    texts.reserve(data.train.size());
    for (const Instance& ins : data.train) {
        texts.push_back(ins.text);
        labels.push_back(ins.label);
    }
    const std::vector<EncodedSeq> encoded = encode_texts(texts, vocab, vmap, cfg.max_positions);

    AdamWState<T> st = AdamWState<T>::init(current);
    const size_t n = encoded.size();
    const uint64_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
    const LrSchedule sched = make_lr_schedule(tc.eta, tc.epochs, steps_per_epoch);

    Rng base(tc.seed);
    Rng shuffle_rng = base.fork(1);
    Rng dropout_rng = base.fork(3);

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    uint64_t step = 0;
    uint64_t since_best = 0;
    for (uint64_t epoch = 1; epoch <= tc.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        size_t count = 0;
        for (size_t begin = 0; begin < n; begin += tc.batch_size) {
            const size_t end = std::min(n, begin + tc.batch_size);
            const double eta_t = sched.at(step);
            ++step;
            const Batch b = gather_batch(encoded, order, begin, end);
            std::vector<int32_t> batch_labels;
            batch_labels.reserve(end - begin);
            for (size_t i = begin; i < end; ++i) batch_labels.push_back(labels[order[i]]);

            Graph<T> g;
            ForwardPass<T> fp(current, g, true, &dropout_rng);
            Var<T> logits = fp.classify_logits(b);
            auto ce = ops::masked_cross_entropy(logits, batch_labels);
            loss_sum += static_cast<double>(ce.loss.value().data[0]) * static_cast<double>(ce.active);
            count += ce.active;
            g.backward(ce.loss);
            adamw_step(current, fp, st, eta_t, tc.alpha);
        }
        res.epoch_loss.push_back(count ? loss_sum / static_cast<double>(count) : 0.0);
        res.epochs_run = epoch;

        const EvalResult ev = evaluate(current, data.test, vocab, vmap, tc.batch_size);
        if (ev.accuracy > res.best_accuracy || res.best_epoch == 0) {
            res.best_accuracy = ev.accuracy;
            res.best_epoch = epoch;
            res.best_eval = ev;
            res.model = current;
            since_best = 0;
        } else if (tc.patience > 0 && ++since_best >= tc.patience) {
            break;
        }
    }
    return res;
}

}  // namespace tlm
