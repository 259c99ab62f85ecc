#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tlm/common.hpp"
#include "tlm/corpus.hpp"
#include "tlm/ops.hpp"
#include "tlm/rng.hpp"
#include "tlm/tokenizer.hpp"

namespace tlm {

struct ConvLayerSpec {
    size_t filters = 0;  // d
    size_t kh = 0;
    size_t kw = 0;
};

struct ModelConfig {
    size_t blocks = 1;
    size_t heads = 12;
    size_t head_dim = 64;
    size_t hidden = 768;  // must equal heads * head_dim
    size_t ffn_mult = 4;
    std::vector<ConvLayerSpec> conv_layers;
    size_t vocab_size = kVocabSize;
    size_t max_positions = kSeqLen;
    size_t num_labels = 2;
    double dropout = 0.1;

    void validate() const {
        if (blocks < 1) throw std::invalid_argument("ModelConfig: blocks must be >= 1");
        if (heads < 1 || head_dim < 1) throw std::invalid_argument("ModelConfig: heads and head_dim must be >= 1");
        if (hidden != heads * head_dim)
            throw std::invalid_argument("ModelConfig: hidden (" + std::to_string(hidden) +
                                        ") != heads * head_dim (" + std::to_string(heads * head_dim) + ")");
        if (ffn_mult < 1) throw std::invalid_argument("ModelConfig: ffn_mult must be >= 1");
        if (vocab_size < 6) throw std::invalid_argument("ModelConfig: vocab_size too small");
        if (max_positions < 1) throw std::invalid_argument("ModelConfig: max_positions must be >= 1");
        if (num_labels < 1) throw std::invalid_argument("ModelConfig: num_labels must be >= 1");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("ModelConfig: dropout must be in [0,1)");
        for (const ConvLayerSpec& c : conv_layers)
            if (c.filters < 1 || c.kh < 1 || c.kw < 1)
                throw std::invalid_argument("ModelConfig: conv layer extents must be >= 1");
    }
};

/// Layer-count latency proxy: four per transformer block, one per conv
/// layer, one for the embedding layer.
inline size_t latency(const ModelConfig& cfg) { return 4 * cfg.blocks + cfg.conv_layers.size() + 1; }

/// Dense sub-vocabulary remap for the reduced-embedding mode. Sub ids are
/// assigned to the five specials first, then the allowed tokens in id order.
struct VocabMap {
    std::vector<int32_t> full_to_sub;  // -1 where absent
    std::vector<int32_t> sub_to_full;
    int32_t unk_sub = -1;
    std::array<int32_t, 5> special_subs{};  // [PAD],[UNK],[CLS],[SEP],[MASK] in sub space

    static VocabMap identity(const Vocab& vocab) {
        VocabMap m;
        m.full_to_sub.resize(vocab.size());
        m.sub_to_full.resize(vocab.size());
        for (size_t i = 0; i < vocab.size(); ++i) {
            m.full_to_sub[i] = static_cast<int32_t>(i);
            m.sub_to_full[i] = static_cast<int32_t>(i);
        }
        m.unk_sub = vocab.unk_id();
        m.special_subs = vocab.special_ids();
        return m;
    }

    static VocabMap reduced(const TokenSet& allowed, const Vocab& vocab) {
        VocabMap m;
        m.full_to_sub.assign(vocab.size(), -1);
        const auto add = [&](int32_t full) {
            if (m.full_to_sub[static_cast<size_t>(full)] >= 0) return;
            m.full_to_sub[static_cast<size_t>(full)] = static_cast<int32_t>(m.sub_to_full.size());
            m.sub_to_full.push_back(full);
        };
        for (int32_t s : vocab.special_ids()) add(s);
        for (int32_t id : allowed.ids) add(id);
        m.unk_sub = m.full_to_sub[static_cast<size_t>(vocab.unk_id())];
        for (size_t i = 0; i < 5; ++i)
            m.special_subs[i] = m.full_to_sub[static_cast<size_t>(vocab.special_ids()[i])];
        return m;
    }

    /// Rebuild a map from the sub_to_full list a checkpoint carries.
    static VocabMap from_sub_vocab(const std::vector<int32_t>& sub_to_full, const Vocab& vocab) {
        VocabMap m;
        m.full_to_sub.assign(vocab.size(), -1);
        m.sub_to_full = sub_to_full;
        for (size_t s = 0; s < sub_to_full.size(); ++s) {
            const int32_t full = sub_to_full[s];
            if (full < 0 || static_cast<size_t>(full) >= vocab.size())
                throw DataError("sub-vocabulary entry " + std::to_string(full) + " out of range");
            if (m.full_to_sub[static_cast<size_t>(full)] >= 0)
                throw DataError("sub-vocabulary repeats token id " + std::to_string(full));
            m.full_to_sub[static_cast<size_t>(full)] = static_cast<int32_t>(s);
        }
        for (size_t i = 0; i < 5; ++i) {
            const int32_t s = m.full_to_sub[static_cast<size_t>(vocab.special_ids()[i])];
            if (s < 0) throw DataError("sub-vocabulary is missing a special token");
            m.special_subs[i] = s;
        }
        m.unk_sub = m.special_subs[1];
        return m;
    }

    size_t sub_size() const { return sub_to_full.size(); }

    int32_t to_sub(int32_t full) const {
        const int32_t s = full_to_sub.at(static_cast<size_t>(full));
        if (s < 0)
            throw DataError("token id " + std::to_string(full) + " not in the reduced vocabulary");
        return s;
    }

    /// Lossy remap for downstream text: unknown-to-the-subset tokens fall
    /// back to [UNK], mirroring what a model with this vocabulary can see.
    int32_t remap(int32_t full) const {
        const int32_t s = full_to_sub.at(static_cast<size_t>(full));
        return s < 0 ? unk_sub : s;
    }
};

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
    bool decay = false;  // weight decay applies (weights yes, biases/norms no)
};

/// Row-major [bsz, seq] token ids with a matching attention mask (1 = real).
struct Batch {
    size_t bsz = 0;
    size_t seq = 0;
    std::vector<int32_t> ids;
    std::vector<uint8_t> mask;

    void validate() const {
        if (bsz == 0 || seq == 0) throw std::invalid_argument("Batch: empty");
        if (ids.size() != bsz * seq || mask.size() != bsz * seq)
            throw std::invalid_argument("Batch: ids/mask size does not match bsz*seq");
    }
};

inline Batch make_batch(const std::vector<TokenizedSequence>& seqs) {
    if (seqs.empty()) throw std::invalid_argument("make_batch: empty batch");
    Batch b;
    b.bsz = seqs.size();
    b.seq = kSeqLen;
    b.ids.reserve(b.bsz * b.seq);
    b.mask.reserve(b.bsz * b.seq);
    for (const TokenizedSequence& s : seqs) {
        b.ids.insert(b.ids.end(), s.ids.begin(), s.ids.end());
        b.mask.insert(b.mask.end(), s.attention_mask.begin(), s.attention_mask.end());
    }
    return b;
}

template <typename T>
class Model {
  public:
    Model(ModelConfig cfg, uint64_t seed) : config_(std::move(cfg)) {
        config_.validate();
        Rng rng(seed);
        const size_t h = config_.hidden;
        const size_t f = config_.ffn_mult * h;

        add_weight("embeddings.word", {config_.vocab_size, h}, rng);
        add_weight("embeddings.position", {config_.max_positions, h}, rng);
        add_norm("embeddings.norm", h);

        size_t in_ch = 1;
        for (size_t i = 0; i < config_.conv_layers.size(); ++i) {
            const ConvLayerSpec& c = config_.conv_layers[i];
            const std::string base = "conv." + std::to_string(i);
            add_weight(base + ".filters", {c.filters, in_ch, c.kh, c.kw}, rng);
            add_bias(base + ".bias", {c.filters});
            in_ch = c.filters;
        }
        if (!config_.conv_layers.empty()) {
            add_weight("conv.proj.filters", {1, in_ch, 1, 1}, rng);
            add_bias("conv.proj.bias", {1});
        }

        for (size_t b = 0; b < config_.blocks; ++b) {
            const std::string base = "block." + std::to_string(b);
            add_weight(base + ".attn.wq", {h, h}, rng);
            add_bias(base + ".attn.bq", {h});
            add_weight(base + ".attn.wk", {h, h}, rng);
            add_bias(base + ".attn.bk", {h});
            add_weight(base + ".attn.wv", {h, h}, rng);
            add_bias(base + ".attn.bv", {h});
            add_weight(base + ".attn.wo", {h, h}, rng);
            add_bias(base + ".attn.bo", {h});
            add_norm(base + ".attn.norm", h);
            add_weight(base + ".ffn.w1", {h, f}, rng);
            add_bias(base + ".ffn.b1", {f});
            add_weight(base + ".ffn.w2", {f, h}, rng);
            add_bias(base + ".ffn.b2", {h});
            add_norm(base + ".ffn.norm", h);
        }

        add_weight("mlm.dense.w", {h, h}, rng);
        add_bias("mlm.dense.b", {h});
        add_norm("mlm.norm", h);
        add_bias("mlm.decoder.bias", {config_.vocab_size});

        add_weight("cls.w", {h, config_.num_labels}, rng);
        add_bias("cls.b", {config_.num_labels});

        for (size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
    }

    const ModelConfig& config() const { return config_; }
    std::vector<NamedTensor<T>>& params() { return params_; }
    const std::vector<NamedTensor<T>>& params() const { return params_; }

    Tensor<T>& tensor(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
        return params_[it->second].tensor;
    }
    const Tensor<T>& tensor(const std::string& name) const {
        return const_cast<Model*>(this)->tensor(name);
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    size_t param_index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
        return it->second;
    }

    size_t scalar_count() const {
        size_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

    template <typename U>
    Model<U> cast() const {
        Model<U> out(config_, 0);
        for (size_t i = 0; i < params_.size(); ++i)
            out.params()[i].tensor = params_[i].tensor.template cast<U>();
        return out;
    }

  private:
    void add_weight(std::string name, std::vector<size_t> shape, Rng& rng) {
        Tensor<T> t(shape);
        for (size_t i = 0; i < t.size(); ++i)
            t.data[i] = static_cast<T>(rng.next_truncated_normal(0.02));
        params_.push_back({std::move(name), std::move(t), true});
    }
    void add_bias(std::string name, std::vector<size_t> shape) {
        params_.push_back({std::move(name), Tensor<T>(shape, T(0)), false});
    }
    void add_norm(const std::string& base, size_t h) {
        params_.push_back({base + ".gain", Tensor<T>({h}, T(1)), false});
        params_.push_back({base + ".bias", Tensor<T>({h}, T(0)), false});
    }

    ModelConfig config_;
    std::vector<NamedTensor<T>> params_;
    std::unordered_map<std::string, size_t> index_;
};

/// One taped forward pass. Binds every parameter to the graph on
/// construction; training mode enables dropout (driven by the supplied Rng).
template <typename T>
class ForwardPass {
  public:
    ForwardPass(Model<T>& model, Graph<T>& g, bool training = false, Rng* dropout_rng = nullptr)
        : model_(model), g_(g), training_(training), rng_(dropout_rng) {
        if (training_ && model_.config().dropout > 0.0 && rng_ == nullptr)
            throw std::invalid_argument("training forward pass needs an rng for dropout");
        vars_.reserve(model_.params().size());
        for (auto& p : model_.params()) {
            vars_.push_back(g_.parameter(p.tensor));
            var_index_[p.name] = vars_.size() - 1;
        }
    }

    Graph<T>& graph() { return g_; }

    /// Encoder: embeddings -> optional conv front-end -> transformer blocks.
    /// Returns hidden states [B, S, H] and caches the attention key mask.
    Var<T> encode(const Batch& batch) {
        const ModelConfig& cfg = model_.config();
        batch.validate();
        const size_t bsz = batch.bsz, s = batch.seq, h = cfg.hidden;
        if (s > cfg.max_positions)
            throw std::invalid_argument("encode: sequence length " + std::to_string(s) +
                                        " exceeds max_positions " + std::to_string(cfg.max_positions));

        key_mask_ = Tensor<T>({bsz, s});
        for (size_t i = 0; i < bsz * s; ++i) {
            const int32_t id = batch.ids[i];
            if (id < 0 || static_cast<size_t>(id) >= cfg.vocab_size)
                throw std::invalid_argument("encode: token id " + std::to_string(id) +
                                            " out of range for vocab_size " +
                                            std::to_string(cfg.vocab_size));
            key_mask_.data[i] = batch.mask[i] ? T(1) : T(0);
        }

        Var<T> tok = ops::gather_rows(p("embeddings.word"), batch.ids);       // [B*S, H]
        Var<T> x = ops::reshape(tok, {bsz, s, h});
        std::vector<int32_t> pos_ids(s);
        for (size_t i = 0; i < s; ++i) pos_ids[i] = static_cast<int32_t>(i);
        Var<T> pos = ops::gather_rows(p("embeddings.position"), pos_ids);     // [S, H]
        x = ops::add_bias(x, pos);
        x = ops::layer_norm(x, p("embeddings.norm.gain"), p("embeddings.norm.bias"), kNormEps);
        x = maybe_dropout(x);

        if (!cfg.conv_layers.empty()) x = conv_frontend(x, &key_mask_);

        for (size_t b = 0; b < cfg.blocks; ++b) x = block(x, b, bsz, s);
        return x;
    }

    /// Convolutional front-end over the [S, H] embedding plane, residual.
    /// Pad rows are zeroed before the conv stack so kernels spanning the
    /// sequence axis cannot leak pad content into real positions.
    Var<T> conv_frontend(Var<T> x, const Tensor<T>* mask = nullptr) {
        const ModelConfig& cfg = model_.config();
        const size_t bsz = x.shape()[0], s = x.shape()[1], h = x.shape()[2];
        Var<T> map = ops::reshape(x, {bsz, size_t(1), s, h});
        Var<T> y = map;
        if (mask != nullptr) {
            Tensor<T> gate({bsz, size_t(1), s, h});
            for (size_t b = 0; b < bsz; ++b)
                for (size_t i = 0; i < s; ++i)
                    for (size_t j = 0; j < h; ++j)
                        gate.data[(b * s + i) * h + j] = mask->data[b * s + i];
            y = ops::mul(y, g_.constant(gate));
        }
        for (size_t i = 0; i < cfg.conv_layers.size(); ++i) {
            const std::string base = "conv." + std::to_string(i);
            y = ops::conv2d_same(y, p(base + ".filters"), p(base + ".bias"));
            y = ops::gelu(y);
        }
        y = ops::conv2d_same(y, p("conv.proj.filters"), p("conv.proj.bias"));
        y = ops::add(map, y);
        return ops::reshape(y, {bsz, s, h});
    }

    /// MLM logits [B, S, V]; decoder weights are the embedding matrix.
    Var<T> mlm_logits(const Batch& batch) {
        const ModelConfig& cfg = model_.config();
        Var<T> x = encode(batch);
        const size_t bsz = x.shape()[0], s = x.shape()[1], h = cfg.hidden;
        Var<T> flat = ops::reshape(x, {bsz * s, h});
        Var<T> d = linear(flat, "mlm.dense.w", "mlm.dense.b");
        d = ops::gelu(d);
        d = ops::layer_norm(d, p("mlm.norm.gain"), p("mlm.norm.bias"), kNormEps);
        Var<T> logits = ops::matmul_nt(d, p("embeddings.word"));  // tied decoder
        logits = ops::add_bias(logits, p("mlm.decoder.bias"));
        return ops::reshape(logits, {bsz, s, cfg.vocab_size});
    }

    /// Raw label logits [B, num_labels] from the [CLS] representation.
    Var<T> classify_logits(const Batch& batch) {
        Var<T> x = encode(batch);
        const size_t bsz = x.shape()[0], h = model_.config().hidden;
        Var<T> cls = ops::slice_axis(x, 1, 0, 1);       // [B, 1, H]
        cls = ops::reshape(cls, {bsz, h});
        return linear(cls, "cls.w", "cls.b");
    }

    const Tensor<T>& key_mask() const { return key_mask_; }
    /// Bound Var for model.params()[i]; index order matches the model.
    Var<T> param_var(size_t i) const { return vars_.at(i); }
    Var<T> p(const std::string& name) {
        auto it = var_index_.find(name);
        if (it == var_index_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
        return vars_[it->second];
    }

    static constexpr T kNormEps = static_cast<T>(1e-12);

  private:
    Var<T> linear(Var<T> x2d, const std::string& w, const std::string& b) {
        return ops::add_bias(ops::matmul(x2d, p(w)), p(b));
    }

    Var<T> maybe_dropout(Var<T> x) {
        if (!training_) return x;
        return ops::dropout(x, model_.config().dropout, *rng_);
    }

    Var<T> block(Var<T> x, size_t b, size_t bsz, size_t s) {
        const ModelConfig& cfg = model_.config();
        const size_t h = cfg.hidden, nh = cfg.heads, dh = cfg.head_dim;
        const std::string base = "block." + std::to_string(b);

        Var<T> flat = ops::reshape(x, {bsz * s, h});
        Var<T> q = heads_view(linear(flat, base + ".attn.wq", base + ".attn.bq"), bsz, s, nh, dh);
        Var<T> k = heads_view(linear(flat, base + ".attn.wk", base + ".attn.bk"), bsz, s, nh, dh);
        Var<T> v = heads_view(linear(flat, base + ".attn.wv", base + ".attn.bv"), bsz, s, nh, dh);

        Var<T> scores = ops::matmul_nt(q, k);                                  // [B,NH,S,S]
        scores = ops::scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
        Var<T> probs = ops::masked_softmax_last(scores, key_mask_);
        probs = maybe_dropout(probs);
        Var<T> ctx = ops::matmul(probs, v);                                    // [B,NH,S,DH]
        ctx = ops::permute(ctx, {0, 2, 1, 3});                                 // [B,S,NH,DH]
        Var<T> merged = ops::reshape(ctx, {bsz * s, h});
        Var<T> attn_out = linear(merged, base + ".attn.wo", base + ".attn.bo");
        attn_out = maybe_dropout(attn_out);
        Var<T> res = ops::add(flat, attn_out);
        Var<T> normed = ops::layer_norm(res, p(base + ".attn.norm.gain"), p(base + ".attn.norm.bias"),
                                        kNormEps);

        Var<T> ff = linear(normed, base + ".ffn.w1", base + ".ffn.b1");
        ff = ops::gelu(ff);
        ff = linear(ff, base + ".ffn.w2", base + ".ffn.b2");
        ff = maybe_dropout(ff);
        Var<T> res2 = ops::add(normed, ff);
        Var<T> out = ops::layer_norm(res2, p(base + ".ffn.norm.gain"), p(base + ".ffn.norm.bias"),
                                     kNormEps);
        return ops::reshape(out, {bsz, s, h});
    }

    Var<T> heads_view(Var<T> flat, size_t bsz, size_t s, size_t nh, size_t dh) {
        Var<T> x = ops::reshape(flat, {bsz, s, nh, dh});
        return ops::permute(x, {0, 2, 1, 3});  // [B,NH,S,DH]
    }

    Model<T>& model_;
    Graph<T>& g_;
    bool training_;
    Rng* rng_;
    std::vector<Var<T>> vars_;
    std::unordered_map<std::string, size_t> var_index_;
    Tensor<T> key_mask_;
};

}  // namespace tlm
