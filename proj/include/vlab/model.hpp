#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlab/tensor.hpp"

namespace vlab {

struct TransformerConfig {
    size_t vocab_size = 64;
    size_t seq_len = 32;
    size_t embed_dim = 64;
    size_t num_heads = 4;
    size_t num_layers = 2;
    size_t num_classes = 4;
    size_t mlp_ratio = 4;
    std::vector<std::string> lora_targets = {"query", "value"};
    size_t lora_rank = 8;
    double lora_alpha = 16.0;
    double lora_dropout = 0.1;

    size_t mlp_hidden() const { return embed_dim * mlp_ratio; }

    void validate() const {
        if (vocab_size < 2 || seq_len == 0 || embed_dim == 0 || num_heads == 0 ||
            num_layers == 0 || num_classes < 2)
            throw std::invalid_argument("model config: extents must be positive, classes >= 2");
        if (embed_dim % num_heads != 0)
            throw std::invalid_argument("model config: embed_dim must be divisible by num_heads");
        if (lora_rank == 0) throw std::invalid_argument("model config: lora_rank must be positive");
        if (lora_dropout < 0.0 || lora_dropout >= 1.0)
            throw std::invalid_argument("model config: lora_dropout must be in [0, 1)");
        for (const auto& t : lora_targets)
            if (t != "query" && t != "key" && t != "value" && t != "out")
                throw std::invalid_argument("model config: unknown lora target '" + t + "'");
    }
};

// Low-rank increment attached to a linear layer: (alpha/rank) * B * A * dropout(x),
// with A trainable from a small Gaussian and B trainable from zero.
template <typename T>
struct LoraAdapter {
    Tensor<T> a;  // [rank, d_in]
    Tensor<T> b;  // [d_out, rank]
    size_t rank = 0;
    T alpha = T(0);
    T dropout_p = T(0);

    T scaling() const { return alpha / T(rank); }
};

template <typename T>
struct LinearLayer {
    Tensor<T> w;     // [d_out, d_in]
    Tensor<T> bias;  // [d_out]
    std::optional<LoraAdapter<T>> adapter;

    size_t d_in() const { return w.cols(); }
    size_t d_out() const { return w.rows(); }
};

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma;
    Tensor<T> beta;
};

// Base path plus, when an adapter is attached, the scaled low-rank increment.
// Dropout acts on the adapter input in train mode only; with B = 0 the layer is
// exactly the frozen base layer.
template <typename T>
Tensor<T> linear_forward(Tape<T>* tape, const LinearLayer<T>& lin, const Tensor<T>& x,
                         RunMode mode, RngStream* dropout_rng) {
    if (x.cols() != lin.d_in())
        throw std::invalid_argument("linear: input " + shape_str(x.shape) +
                                    " does not match weight " + shape_str(lin.w.shape));
    Tensor<T> y = add_bias(tape, matmul_nt(tape, x, lin.w), lin.bias);
    if (lin.adapter) {
        const LoraAdapter<T>& ad = *lin.adapter;
        Tensor<T> z;
        const Tensor<T>* zin = &x;
        if (mode == RunMode::train && ad.dropout_p > T(0)) {
            if (!dropout_rng)
                throw std::invalid_argument("linear: train-mode dropout needs an rng stream");
            z = apply_mask(tape, x, dropout_mask<T>(x.numel(), double(ad.dropout_p), *dropout_rng));
            zin = &z;
        }
        Tensor<T> upd = matmul_nt(tape, matmul_nt(tape, *zin, ad.a), ad.b);
        y = add(tape, y, scale(tape, upd, ad.scaling()));
    }
    return y;
}

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor;
};

// Pre-norm transformer encoder classifier: token + position embeddings, blocks of
// attention and GELU MLP with residuals, final norm, mean pooling, linear head.
template <typename T>
class TinyTransformer {
public:
    struct Block {
        LayerNormParams<T> ln1, ln2;
        LinearLayer<T> query, key, value, out;
        LinearLayer<T> fc1, fc2;
    };

    explicit TinyTransformer(TransformerConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const size_t d = cfg_.embed_dim;
        tok_embed_ = Tensor<T>({cfg_.vocab_size, d});
        pos_embed_ = Tensor<T>({cfg_.seq_len, d});
        blocks_.resize(cfg_.num_layers);
        for (auto& blk : blocks_) {
            blk.ln1 = make_norm(d);
            blk.ln2 = make_norm(d);
            blk.query = make_linear(d, d);
            blk.key = make_linear(d, d);
            blk.value = make_linear(d, d);
            blk.out = make_linear(d, d);
            blk.fc1 = make_linear(cfg_.mlp_hidden(), d);
            blk.fc2 = make_linear(d, cfg_.mlp_hidden());
        }
        ln_final_ = make_norm(d);
        head_ = make_linear(cfg_.num_classes, d);
    }

    const TransformerConfig& config() const { return cfg_; }

    void init_base(RngStream& rng) {
        const T std = T(0.02);
        fill_normal(tok_embed_, std, rng);
        fill_normal(pos_embed_, std, rng);
        for (auto& blk : blocks_) {
            for (LinearLayer<T>* lin :
                 {&blk.query, &blk.key, &blk.value, &blk.out, &blk.fc1, &blk.fc2})
                fill_normal(lin->w, std, rng);
        }
        fill_normal(head_.w, std, rng);
    }

    void freeze_base() { base_frozen_ = true; }
    bool base_frozen() const { return base_frozen_; }
    bool has_adapters() const { return has_adapters_; }
    bool merged() const { return merged_; }

    // Attaches fresh adapters to the configured attention projections. A is
    // Gaussian with standard deviation 1/rank, B is zero, so the attached model
    // computes exactly what the base did.
    void attach_adapters(RngStream& rng) {
        if (has_adapters_) throw std::logic_error("attach_adapters: adapters already attached");
        if (merged_) throw std::logic_error("attach_adapters: adapters were already merged");
        for (auto& blk : blocks_)
            for (const std::string& target : cfg_.lora_targets)
                attach_one(pick_target(blk, target), rng);
        has_adapters_ = true;
    }

    // Folds every adapter into its base weight (W += (alpha/r) * B * A) and
    // removes it. Meant for eval-mode deployment; refuses to run twice.
    void merge_adapters() {
        if (merged_) throw std::logic_error("merge_adapters: already merged");
        if (!has_adapters_) throw std::logic_error("merge_adapters: no adapters attached");
        for (auto& blk : blocks_) {
            for (LinearLayer<T>* lin :
                 {&blk.query, &blk.key, &blk.value, &blk.out, &blk.fc1, &blk.fc2}) {
                if (!lin->adapter) continue;
                const LoraAdapter<T>& ad = *lin->adapter;
                const T s = ad.scaling();
                // W[j, i] += s * sum_r B[j, r] * A[r, i]
                for (size_t j = 0; j < lin->d_out(); ++j)
                    for (size_t r = 0; r < ad.rank; ++r) {
                        const T brj = s * ad.b.at(j, r);
                        for (size_t i = 0; i < lin->d_in(); ++i)
                            lin->w.at(j, i) += brj * ad.a.at(r, i);
                    }
                lin->adapter.reset();
            }
        }
        has_adapters_ = false;
        merged_ = true;
    }

    Tensor<T> forward(Tape<T>* tape, std::span<const int32_t> tokens, RunMode mode,
                      RngStream* dropout_rng) const {
        if (tokens.empty() || tokens.size() % cfg_.seq_len != 0)
            throw std::invalid_argument("forward: token count " + std::to_string(tokens.size()) +
                                        " is not a multiple of seq_len " +
                                        std::to_string(cfg_.seq_len));
        const size_t batch = tokens.size() / cfg_.seq_len;
        Tensor<T> x = embedding(tape, tok_embed_, tokens);
        x = add(tape, x, tile_rows(tape, pos_embed_, batch));
        for (const Block& blk : blocks_) {
            Tensor<T> h = layer_norm(tape, x, blk.ln1.gamma, blk.ln1.beta);
            Tensor<T> q = linear_forward(tape, blk.query, h, mode, dropout_rng);
            Tensor<T> k = linear_forward(tape, blk.key, h, mode, dropout_rng);
            Tensor<T> v = linear_forward(tape, blk.value, h, mode, dropout_rng);
            Tensor<T> a = attention(tape, q, k, v, batch, cfg_.num_heads);
            x = add(tape, x, linear_forward(tape, blk.out, a, mode, dropout_rng));
            Tensor<T> m = layer_norm(tape, x, blk.ln2.gamma, blk.ln2.beta);
            m = linear_forward(tape, blk.fc2, gelu(tape, linear_forward(tape, blk.fc1, m, mode, dropout_rng)),
                               mode, dropout_rng);
            x = add(tape, x, m);
        }
        x = layer_norm(tape, x, ln_final_.gamma, ln_final_.beta);
        Tensor<T> pooled = mean_pool(tape, x, batch);
        return linear_forward(tape, head_, pooled, mode, dropout_rng);
    }

    // All parameters under stable names; base groups first, adapters last,
    // both in architecture order.
    std::vector<ParamRef<T>> named_params() {
        std::vector<ParamRef<T>> out;
        out.push_back({"base/tok_embed", &tok_embed_});
        out.push_back({"base/pos_embed", &pos_embed_});
        for (size_t i = 0; i < blocks_.size(); ++i) {
            const std::string p = "base/block" + std::to_string(i) + "/";
            Block& blk = blocks_[i];
            out.push_back({p + "ln1/gamma", &blk.ln1.gamma});
            out.push_back({p + "ln1/beta", &blk.ln1.beta});
            for (auto& [tag, lin] : target_list(blk)) {
                out.push_back({p + "attn/" + tag + "/w", &lin->w});
                out.push_back({p + "attn/" + tag + "/b", &lin->bias});
            }
            out.push_back({p + "ln2/gamma", &blk.ln2.gamma});
            out.push_back({p + "ln2/beta", &blk.ln2.beta});
            out.push_back({p + "mlp/fc1/w", &blk.fc1.w});
            out.push_back({p + "mlp/fc1/b", &blk.fc1.bias});
            out.push_back({p + "mlp/fc2/w", &blk.fc2.w});
            out.push_back({p + "mlp/fc2/b", &blk.fc2.bias});
        }
        out.push_back({"base/ln_f/gamma", &ln_final_.gamma});
        out.push_back({"base/ln_f/beta", &ln_final_.beta});
        out.push_back({"base/head/w", &head_.w});
        out.push_back({"base/head/b", &head_.bias});
        for (size_t i = 0; i < blocks_.size(); ++i) {
            const std::string p = "lora/block" + std::to_string(i) + "/attn/";
            for (auto& [tag, lin] : target_list(blocks_[i])) {
                if (!lin->adapter) continue;
                out.push_back({p + tag + "/A", &lin->adapter->a});
                out.push_back({p + tag + "/B", &lin->adapter->b});
            }
        }
        return out;
    }

    // Before freezing this is the whole base; afterwards only adapter factors.
    std::vector<ParamRef<T>> trainable_params() {
        std::vector<ParamRef<T>> out;
        for (auto& ref : named_params()) {
            const bool is_lora = ref.name.rfind("lora/", 0) == 0;
            if (base_frozen_ ? is_lora : !is_lora) out.push_back(ref);
        }
        return out;
    }

    size_t trainable_count() {
        size_t n = 0;
        for (auto& ref : trainable_params()) n += ref.tensor->numel();
        return n;
    }

    void register_trainable(Tape<T>& tape) {
        for (auto& ref : named_params()) ref.tensor->node = -1;
        for (auto& ref : trainable_params()) {
            ref.tensor->requires_grad = true;
            tape.leaf(*ref.tensor);
        }
    }

    void set_trainable(std::span<const T> flat) {
        size_t off = 0;
        for (auto& ref : trainable_params()) {
            if (off + ref.tensor->numel() > flat.size())
                throw std::invalid_argument("set_trainable: flat vector too short");
            std::copy_n(flat.data() + off, ref.tensor->numel(), ref.tensor->data.data());
            off += ref.tensor->numel();
        }
        if (off != flat.size())
            throw std::invalid_argument("set_trainable: flat vector size mismatch");
    }

    std::vector<T> get_trainable() {
        std::vector<T> flat;
        flat.reserve(trainable_count());
        for (auto& ref : trainable_params())
            flat.insert(flat.end(), ref.tensor->data.begin(), ref.tensor->data.end());
        return flat;
    }

    std::vector<T> gather_trainable_grads(const Tape<T>& tape) {
        std::vector<T> flat;
        flat.reserve(trainable_count());
        for (auto& ref : trainable_params()) {
            auto g = tape.grad(*ref.tensor);
            if (g.empty())
                flat.insert(flat.end(), ref.tensor->numel(), T(0));
            else
                flat.insert(flat.end(), g.begin(), g.end());
        }
        return flat;
    }

private:
    static LayerNormParams<T> make_norm(size_t d) {
        LayerNormParams<T> ln{Tensor<T>({d}), Tensor<T>({d})};
        std::fill(ln.gamma.data.begin(), ln.gamma.data.end(), T(1));
        return ln;
    }

    static LinearLayer<T> make_linear(size_t d_out, size_t d_in) {
        return LinearLayer<T>{Tensor<T>({d_out, d_in}), Tensor<T>({d_out}), std::nullopt};
    }

    static void fill_normal(Tensor<T>& t, T std, RngStream& rng) {
        for (T& v : t.data) v = T(rng.normal()) * std;
    }

    static std::vector<std::pair<std::string, LinearLayer<T>*>> target_list(Block& blk) {
        return {{"query", &blk.query}, {"key", &blk.key}, {"value", &blk.value}, {"out", &blk.out}};
    }

    LinearLayer<T>& pick_target(Block& blk, const std::string& name) {
        if (name == "query") return blk.query;
        if (name == "key") return blk.key;
        if (name == "value") return blk.value;
        if (name == "out") return blk.out;
        throw std::invalid_argument("unknown lora target '" + name + "'");
    }

    void attach_one(LinearLayer<T>& lin, RngStream& rng) {
        const size_t r = cfg_.lora_rank;
        if (r > std::min(lin.d_in(), lin.d_out()))
            throw std::invalid_argument("lora rank " + std::to_string(r) + " exceeds min(" +
                                        std::to_string(lin.d_in()) + ", " +
                                        std::to_string(lin.d_out()) + ")");
        LoraAdapter<T> ad;
        ad.rank = r;
        ad.alpha = T(cfg_.lora_alpha);
        ad.dropout_p = T(cfg_.lora_dropout);
        ad.a = Tensor<T>({r, lin.d_in()});
        ad.b = Tensor<T>({lin.d_out(), r});
        fill_normal(ad.a, T(1) / T(r), rng);
        lin.adapter = std::move(ad);
    }

    TransformerConfig cfg_;
    Tensor<T> tok_embed_, pos_embed_;
    std::vector<Block> blocks_;
    LayerNormParams<T> ln_final_;
    LinearLayer<T> head_;
    bool base_frozen_ = false;
    bool has_adapters_ = false;
    bool merged_ = false;
};

}  // namespace vlab
