#pragma once

#include <nlohmann/json.hpp>

#include "psycho/blocks.hpp"

namespace psycho {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// declarative model description

struct StemConfig {
    int64_t channels = 64;
    int64_t kernel = 3;
    int64_t stride = 1;
    bool maxpool = false;  // 3x3 stride-2 pool after the stem conv
};

struct LayerConfig {
    std::string type;  // resblock | conv_block | dwconv_block | simple_conv_block | phasor_i | phasor_c
    int64_t d_in = 0;
    int64_t d_out = 0;
    int64_t stride = 1;
    int64_t d_bottleneck = 0;  // resblock only
    bool efficient = false;    // phasor blocks only
    bool tap = false;          // feed this layer's spectrum to a second filter-bank group
};

struct DvcConfig {
    bool enabled = true;
    std::vector<SubBandSpec> sub_bands;   // applied to the final feature spectrum
    int64_t d_filter = 0;                 // channels per sub-band branch
    std::vector<SubBandSpec> tap_bands;   // applied at the tapped layer's resolution
};

struct HeadConfig {
    int64_t d_in = 0;
    int64_t n_classes = 0;
};

struct ModelConfig {
    std::string name;
    int64_t input_size = 32;
    int64_t in_channels = 3;
    StemConfig stem;
    std::vector<LayerConfig> layers;
    DvcConfig dvc;
    HeadConfig head;
};

// ---------------------------------------------------------------------------
// config (de)serialization; unknown keys are rejected

namespace detail {

inline void expect_keys(const json& j, std::initializer_list<const char*> keys, const std::string& ctx) {
    if (!j.is_object()) throw std::invalid_argument("config: expected object for " + ctx);
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : keys)
            if (it.key() == k) known = true;
        if (!known) throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + ctx);
    }
}

inline std::vector<SubBandSpec> parse_bands(const json& j, const std::string& ctx) {
    std::vector<SubBandSpec> out;
    if (!j.is_array()) throw std::invalid_argument("config: " + ctx + " must be a list of [crop, drop] pairs");
    for (const auto& e : j) {
        if (!e.is_array() || e.size() != 2)
            throw std::invalid_argument("config: " + ctx + " entries must be [crop, drop] pairs");
        out.push_back({e[0].get<int64_t>(), e[1].get<int64_t>()});
    }
    return out;
}

inline json bands_json(const std::vector<SubBandSpec>& bands) {
    json out = json::array();
    for (const auto& b : bands) out.push_back({b.crop, b.drop});
    return out;
}

}  // namespace detail

inline ModelConfig parse_config(const json& j) {
    detail::expect_keys(j, {"name", "input_size", "in_channels", "stem", "layers", "dvc", "head"}, "model");
    ModelConfig c;
    c.name = j.at("name").get<std::string>();
    c.input_size = j.at("input_size").get<int64_t>();
    c.in_channels = j.at("in_channels").get<int64_t>();

    const json& js = j.at("stem");
    detail::expect_keys(js, {"channels", "kernel", "stride", "maxpool"}, "stem");
    c.stem.channels = js.at("channels").get<int64_t>();
    c.stem.kernel = js.at("kernel").get<int64_t>();
    c.stem.stride = js.at("stride").get<int64_t>();
    c.stem.maxpool = js.at("maxpool").get<bool>();

    if (!j.at("layers").is_array()) throw std::invalid_argument("config: layers must be a list");
    for (const auto& jl : j.at("layers")) {
        detail::expect_keys(jl, {"type", "d_in", "d_out", "stride", "d_bottleneck", "efficient", "tap"}, "layer");
        LayerConfig L;
        L.type = jl.at("type").get<std::string>();
        L.d_in = jl.at("d_in").get<int64_t>();
        L.d_out = jl.at("d_out").get<int64_t>();
        L.stride = jl.value("stride", int64_t{1});
        L.d_bottleneck = jl.value("d_bottleneck", int64_t{0});
        L.efficient = jl.value("efficient", false);
        L.tap = jl.value("tap", false);
        c.layers.push_back(L);
    }

    const json& jd = j.at("dvc");
    detail::expect_keys(jd, {"enabled", "sub_bands", "d_filter", "tap_bands"}, "dvc");
    c.dvc.enabled = jd.at("enabled").get<bool>();
    if (c.dvc.enabled) {
        c.dvc.sub_bands = detail::parse_bands(jd.at("sub_bands"), "dvc.sub_bands");
        c.dvc.d_filter = jd.at("d_filter").get<int64_t>();
        if (jd.contains("tap_bands")) c.dvc.tap_bands = detail::parse_bands(jd.at("tap_bands"), "dvc.tap_bands");
    }

    const json& jh = j.at("head");
    detail::expect_keys(jh, {"d_in", "n_classes"}, "head");
    c.head.d_in = jh.at("d_in").get<int64_t>();
    c.head.n_classes = jh.at("n_classes").get<int64_t>();
    return c;
}

inline json config_to_json(const ModelConfig& c) {
    json j;
    j["name"] = c.name;
    j["input_size"] = c.input_size;
    j["in_channels"] = c.in_channels;
    j["stem"] = {{"channels", c.stem.channels},
                 {"kernel", c.stem.kernel},
                 {"stride", c.stem.stride},
                 {"maxpool", c.stem.maxpool}};
    j["layers"] = json::array();
    for (const auto& L : c.layers)
        j["layers"].push_back({{"type", L.type},
                               {"d_in", L.d_in},
                               {"d_out", L.d_out},
                               {"stride", L.stride},
                               {"d_bottleneck", L.d_bottleneck},
                               {"efficient", L.efficient},
                               {"tap", L.tap}});
    j["dvc"] = {{"enabled", c.dvc.enabled},
                {"sub_bands", detail::bands_json(c.dvc.sub_bands)},
                {"d_filter", c.dvc.d_filter},
                {"tap_bands", detail::bands_json(c.dvc.tap_bands)}};
    j["head"] = {{"d_in", c.head.d_in}, {"n_classes", c.head.n_classes}};
    return j;
}

// ---------------------------------------------------------------------------
// validation: channel chaining, real/complex phase ordering, spatial sizes

namespace detail {

inline int64_t conv_out_size(int64_t s, int64_t k, int64_t stride, int64_t pad) {
    return (s + 2 * pad - k) / stride + 1;
}

}  // namespace detail

/// Per-layer summary filled in by validate_config.
struct LayerPlan {
    bool complex_in = false;
    int64_t out_size = 0;
};

inline std::vector<LayerPlan> validate_config(const ModelConfig& c) {
    if (c.stem.channels < 1 || c.stem.kernel < 1 || c.stem.stride < 1)
        throw std::invalid_argument("config: invalid stem");
    if (c.head.n_classes < 2) throw std::invalid_argument("config: head needs at least 2 classes");

    int64_t sz = detail::conv_out_size(c.input_size, c.stem.kernel, c.stem.stride, c.stem.kernel / 2);
    if (c.stem.maxpool) sz = detail::conv_out_size(sz, 3, 2, 1);

    std::vector<LayerPlan> plan;
    int64_t prev = c.stem.channels;
    bool complex_phase = false;
    int n_taps = 0;
    int64_t tap_size = 0, tap_channels = 0;
    for (size_t i = 0; i < c.layers.size(); ++i) {
        const LayerConfig& L = c.layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + L.type + ")";
        if (L.d_in != prev)
            throw std::invalid_argument("config: channel mismatch at " + where + ": d_in=" + std::to_string(L.d_in) +
                                        " but previous stage produces " + std::to_string(prev));
        const bool is_real = L.type == "resblock" || L.type == "conv_block" || L.type == "dwconv_block" ||
                             L.type == "simple_conv_block";
        if (L.type == "phasor_i") {
            if (complex_phase) throw std::invalid_argument("config: second phasor_i at " + where);
            complex_phase = true;
        } else if (L.type == "phasor_c") {
            if (!complex_phase) throw std::invalid_argument("config: phasor_c before phasor_i at " + where);
        } else if (is_real) {
            if (complex_phase) throw std::invalid_argument("config: real-valued " + where + " after phasor_i");
            if (L.type == "resblock" && L.d_bottleneck < 1)
                throw std::invalid_argument("config: resblock needs d_bottleneck at " + where);
        } else {
            throw std::invalid_argument("config: unknown layer type \"" + L.type + "\" at " + where);
        }
        sz = (L.stride == 1) ? sz : detail::conv_out_size(sz, 3, L.stride, 1);
        if (sz < 1) throw std::invalid_argument("config: spatial size vanishes at " + where);
        if (L.tap) {
            ++n_taps;
            tap_size = sz;
            tap_channels = L.d_out;
        }
        plan.push_back({complex_phase && L.type != "phasor_i", sz});
        prev = L.d_out;
    }

    if (c.dvc.enabled) {
        if (c.dvc.d_filter < 1) throw std::invalid_argument("config: dvc.d_filter must be positive");
        if (n_taps > 1) throw std::invalid_argument("config: at most one tapped layer supported");
        if ((n_taps == 1) != !c.dvc.tap_bands.empty())
            throw std::invalid_argument("config: tapped layer and dvc.tap_bands must come together");
        validate_subbands(c.dvc.sub_bands, sz);
        if (n_taps == 1) validate_subbands(c.dvc.tap_bands, tap_size);
        const int64_t nb = static_cast<int64_t>(c.dvc.sub_bands.size() + c.dvc.tap_bands.size());
        if (c.dvc.d_filter * nb != c.head.d_in)
            throw std::invalid_argument("config: head d_in=" + std::to_string(c.head.d_in) + " but " +
                                        std::to_string(nb) + " branches x d_filter=" + std::to_string(c.dvc.d_filter) +
                                        " gives " + std::to_string(c.dvc.d_filter * nb));
    } else {
        if (n_taps > 0) throw std::invalid_argument("config: tapped layer requires dvc enabled");
        if (prev != c.head.d_in)
            throw std::invalid_argument("config: head d_in=" + std::to_string(c.head.d_in) +
                                        " but final features have " + std::to_string(prev) + " channels");
    }
    (void)tap_channels;
    return plan;
}

// ---------------------------------------------------------------------------

template <typename T>
struct Model {
    ModelConfig cfg;
    ConvBlock<T> stem;
    struct Layer {
        LayerConfig cfg;
        ResBlock<T> res;
        ConvBlock<T> cb;
        DWConvBlock<T> dwb;
        SimpleConvBlock<T> scb;
        PhasorI<T> pi;
        PhasorC<T> pc;
    };
    std::vector<Layer> layers;
    DVCModule<T> dvc;      // final-spectrum branches
    DVCModule<T> dvc_tap;  // tapped-spectrum branches, when configured
    bool has_tap = false;
    ComplexLinear<T> head;
    int capture_layer = -1;   // phasor layer whose activations to retain
    CVar<T> captured_act;     // that layer's output after the last forward

    Model() = default;
    Model(Rng& rng, ModelConfig cfg_) : cfg(std::move(cfg_)) {
        std::vector<LayerPlan> plan = validate_config(cfg);
        stem = ConvBlock<T>(rng, cfg.in_channels, cfg.stem.channels, cfg.stem.kernel, cfg.stem.stride,
                            cfg.stem.kernel / 2);
        int64_t final_size = plan.empty()
                                 ? detail::conv_out_size(cfg.input_size, cfg.stem.kernel, cfg.stem.stride,
                                                         cfg.stem.kernel / 2)
                                 : plan.back().out_size;
        if (plan.empty() && cfg.stem.maxpool) final_size = detail::conv_out_size(final_size, 3, 2, 1);
        int64_t tap_size = 0, tap_channels = 0;
        for (size_t i = 0; i < cfg.layers.size(); ++i) {
            const LayerConfig& L = cfg.layers[i];
            Layer lay;
            lay.cfg = L;
            if (L.type == "resblock")
                lay.res = ResBlock<T>(rng, L.d_in, L.d_bottleneck, L.d_out, L.stride);
            else if (L.type == "conv_block")
                lay.cb = ConvBlock<T>(rng, L.d_in, L.d_out, 3, L.stride, 1);
            else if (L.type == "dwconv_block")
                lay.dwb = DWConvBlock<T>(rng, L.d_in, L.d_out, L.stride);
            else if (L.type == "simple_conv_block")
                lay.scb = SimpleConvBlock<T>(rng, L.d_in, L.d_out, L.stride);
            else if (L.type == "phasor_i")
                lay.pi = PhasorI<T>(rng, L.d_in, L.d_out, L.stride, L.efficient);
            else
                lay.pc = PhasorC<T>(rng, L.d_in, L.d_out, L.stride, L.efficient);
            if (L.tap) {
                tap_size = plan[i].out_size;
                tap_channels = L.d_out;
            }
            layers.push_back(std::move(lay));
        }
        const int64_t d_last = cfg.layers.empty() ? cfg.stem.channels : cfg.layers.back().d_out;
        if (cfg.dvc.enabled) {
            dvc = DVCModule<T>(rng, final_size, d_last, cfg.dvc.d_filter, cfg.dvc.sub_bands);
            if (!cfg.dvc.tap_bands.empty()) {
                has_tap = true;
                dvc_tap = DVCModule<T>(rng, tap_size, tap_channels, cfg.dvc.d_filter, cfg.dvc.tap_bands);
            }
        }
        head = ComplexLinear<T>(rng, cfg.head.d_in, cfg.head.n_classes, true);
    }

    /// Pooled complex features entering the head, (N, head.d_in).
    CVar<T> features(const Var<T>& x) {
        Var<T> h = stem.forward(x);
        if (cfg.stem.maxpool) h = maxpool2d(h, 3, 2, 1);
        CVar<T> z;
        CVar<T> tapped;
        bool is_complex = false;
        for (size_t li = 0; li < layers.size(); ++li) {
            auto& lay = layers[li];
            const std::string& t = lay.cfg.type;
            if (t == "resblock")
                h = lay.res.forward(h);
            else if (t == "conv_block")
                h = lay.cb.forward(h);
            else if (t == "dwconv_block")
                h = lay.dwb.forward(h);
            else if (t == "simple_conv_block")
                h = lay.scb.forward(h);
            else if (t == "phasor_i") {
                z = lay.pi.forward(h);
                is_complex = true;
            } else {
                z = lay.pc.forward(z);
            }
            if (lay.cfg.tap) tapped = z;
            if (static_cast<int>(li) == capture_layer) {
                if (!is_complex) throw std::invalid_argument("capture: target layer must be a phasor block");
                z.re->retain_grad = true;
                z.im->retain_grad = true;
                captured_act = z;
            }
        }
        if (!is_complex) z = {h, constant(Tensor<T>::zeros(h->value.shape))};

        if (!cfg.dvc.enabled) {
            Spectrum<T> S = compand(fftshift(fft2_spec(z)), kCompandExponent);
            return complex_avgpool_global(S.z);
        }
        CVar<T> pooled = dvc.forward(z);
        if (has_tap) {
            CVar<T> pt = dvc_tap.forward(tapped);
            pooled = {concat<T>({pt.re, pooled.re}, 1), concat<T>({pt.im, pooled.im}, 1)};
        }
        return pooled;
    }

    /// Complex head outputs, (N, n_classes).
    CVar<T> head_out(const Var<T>& x) { return head.forward(features(x)); }

    /// Real logits: magnitude of each complex head output.
    Var<T> forward(const Var<T>& x) { return magnitude(head_out(x)); }

    void set_training(bool t) {
        stem.set_training(t);
        for (auto& lay : layers) {
            const std::string& ty = lay.cfg.type;
            if (ty == "resblock")
                lay.res.set_training(t);
            else if (ty == "conv_block")
                lay.cb.set_training(t);
            else if (ty == "dwconv_block")
                lay.dwb.set_training(t);
            else if (ty == "simple_conv_block")
                lay.scb.set_training(t);
            else if (ty == "phasor_i")
                lay.pi.set_training(t);
            else
                lay.pc.set_training(t);
        }
        if (cfg.dvc.enabled) {
            dvc.set_training(t);
            if (has_tap) dvc_tap.set_training(t);
        }
    }

    void collect(ParamList<T>& out) {
        stem.collect("stem", out);
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layer" + std::to_string(i);
            const std::string& ty = layers[i].cfg.type;
            if (ty == "resblock")
                layers[i].res.collect(p, out);
            else if (ty == "conv_block")
                layers[i].cb.collect(p, out);
            else if (ty == "dwconv_block")
                layers[i].dwb.collect(p, out);
            else if (ty == "simple_conv_block")
                layers[i].scb.collect(p, out);
            else if (ty == "phasor_i")
                layers[i].pi.collect(p, out);
            else
                layers[i].pc.collect(p, out);
        }
        if (cfg.dvc.enabled) {
            dvc.collect("dvc", out);
            if (has_tap) dvc_tap.collect("dvc_tap", out);
        }
        head.collect("head", out);
    }

    void collect_buffers(BufferList<T>& out) {
        stem.collect_buffers("stem", out);
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layer" + std::to_string(i);
            const std::string& ty = layers[i].cfg.type;
            if (ty == "resblock")
                layers[i].res.collect_buffers(p, out);
            else if (ty == "conv_block")
                layers[i].cb.collect_buffers(p, out);
            else if (ty == "dwconv_block")
                layers[i].dwb.collect_buffers(p, out);
            else if (ty == "simple_conv_block")
                layers[i].scb.collect_buffers(p, out);
            else if (ty == "phasor_i")
                layers[i].pi.collect_buffers(p, out);
            else
                layers[i].pc.collect_buffers(p, out);
        }
        if (cfg.dvc.enabled) {
            dvc.collect_buffers("dvc", out);
            if (has_tap) dvc_tap.collect_buffers("dvc_tap", out);
        }
    }

    int64_t count_params() {
        ParamList<T> ps;
        collect(ps);
        int64_t n = 0;
        for (const auto& p : ps) n += p.v->value.numel();
        return n;
    }

    /// (overall, complex) layer counts. Convolutional and linear layers count
    /// toward "overall", with a depthwise-pointwise pair counted once; each
    /// elementwise filter bank also counts once. "Complex" counts complex conv
    /// and complex linear layers.
    std::pair<int, int> count_layers() const {
        int overall = 1, cplx = 0;  // stem conv
        for (const auto& L : cfg.layers) {
            if (L.type == "resblock")
                overall += 3 + ((L.stride != 1 || L.d_in != L.d_out) ? 1 : 0);
            else if (L.type == "conv_block" || L.type == "dwconv_block")
                overall += 1;
            else if (L.type == "simple_conv_block")
                overall += 2;
            else {  // phasor blocks: conv path + dw path + one complex 1x1
                overall += L.efficient ? 3 : 5;
                cplx += 1;
            }
        }
        if (cfg.dvc.enabled) {
            const int nb = static_cast<int>(cfg.dvc.sub_bands.size() + cfg.dvc.tap_bands.size());
            overall += 2 * nb;  // per branch: filter bank + complex 1x1 mix
            cplx += nb;
        }
        overall += 1;  // head
        cplx += 1;
        return {overall, cplx};
    }
};

// ---------------------------------------------------------------------------
// built-in presets

namespace detail {

inline void add_resnet_stages(ModelConfig& c, int64_t stage2_blocks) {
    // two 56/28-resolution bottleneck stages, 128 output channels each
    c.layers.push_back({"resblock", 64, 128, 1, 32});
    c.layers.push_back({"resblock", 128, 128, 1, 32});
    c.layers.push_back({"resblock", 128, 128, 1, 32});
    c.layers.push_back({"resblock", 128, 128, 2, 64});
    for (int64_t i = 1; i < stage2_blocks; ++i) c.layers.push_back({"resblock", 128, 128, 1, 64});
}

}  // namespace detail

inline ModelConfig preset_config(const std::string& name) {
    ModelConfig c;
    c.name = name;
    if (name == "model-i" || name == "model-ii") {
        c.stem = {64, 3, 1, false};
        c.layers.push_back({"phasor_i", 64, 256, 2});
        c.layers.push_back({"phasor_c", 256, 256, 1});
        if (name == "model-i") {
            c.dvc = {true, {{8, 4}, {4, 1}}, 256, {}};
            c.head = {512, 10};
        } else {
            c.dvc.enabled = false;
            c.head = {256, 10};
        }
    } else if (name == "model-iii" || name == "model-iv") {
        c.stem = {64, 3, 1, false};
        c.layers.push_back({"simple_conv_block", 64, 64, 1});
        c.layers.push_back({"simple_conv_block", 64, 64, 1});
        c.layers.push_back({"simple_conv_block", 64, 128, 2});
        c.layers.push_back({"simple_conv_block", 128, 192, 1});
        c.layers.push_back({"simple_conv_block", 192, 256, 1});
        if (name == "model-iii") {
            c.dvc = {true, {{8, 4}, {4, 1}}, 256, {}};
            c.head = {512, 10};
        } else {
            c.dvc.enabled = false;
            c.head = {256, 10};
        }
    } else if (name == "model-i-micro") {
        c.input_size = 8;
        c.stem = {8, 3, 1, false};
        c.layers.push_back({"phasor_i", 8, 16, 2});
        c.layers.push_back({"phasor_c", 16, 16, 1});
        c.dvc = {true, {{4, 2}, {2, 1}}, 16, {}};
        c.head = {32, 2};
    } else if (name == "psycho-s") {
        c.input_size = 224;
        c.stem = {64, 7, 2, true};
        detail::add_resnet_stages(c, 4);
        c.layers.push_back({"phasor_i", 128, 256, 2});
        c.layers.push_back({"phasor_c", 256, 256, 1});
        c.layers.push_back({"phasor_c", 256, 384, 1});
        c.layers.push_back({"phasor_c", 384, 512, 1});
        c.layers.push_back({"phasor_c", 512, 512, 1});
        c.dvc = {true, {{14, 8}, {8, 4}, {4, 1}}, 512, {}};
        c.head = {1536, 1000};
    } else if (name == "psycho-b") {
        c.input_size = 224;
        c.stem = {64, 7, 2, true};
        detail::add_resnet_stages(c, 4);
        c.layers.push_back({"phasor_i", 128, 256, 1});
        c.layers.push_back({"phasor_c", 256, 256, 1});
        c.layers.push_back({"phasor_c", 256, 256, 1});
        c.layers.push_back({"phasor_c", 256, 384, 1});
        c.layers.push_back({"phasor_c", 384, 384, 2});
        c.layers.push_back({"phasor_c", 384, 384, 1});
        c.layers.push_back({"phasor_c", 384, 512, 1});
        c.layers.push_back({"phasor_c", 512, 512, 1});
        c.layers.push_back({"phasor_c", 512, 512, 1});
        c.dvc = {true, {{14, 8}, {8, 4}, {4, 1}}, 512, {}};
        c.head = {1536, 1000};
    } else if (name == "psycho-l") {
        c.input_size = 224;
        c.stem = {64, 7, 2, true};
        detail::add_resnet_stages(c, 4);
        c.layers.push_back({"phasor_i", 128, 256, 1});
        c.layers.push_back({"phasor_c", 256, 512, 1});
        c.layers.push_back({"phasor_c", 512, 512, 1});
        c.layers.push_back({"phasor_c", 512, 512, 1});
        c.layers.push_back({"phasor_c", 512, 512, 2});
        for (int i = 0; i < 4; ++i) c.layers.push_back({"phasor_c", 512, 512, 1});
        c.dvc = {true, {{14, 8}, {8, 4}, {4, 1}}, 512, {}};
        c.head = {1536, 1000};
    } else if (name == "psycho-h") {
        c.input_size = 224;
        c.stem = {64, 7, 2, true};
        detail::add_resnet_stages(c, 4);
        c.layers.push_back({"phasor_i", 128, 256, 1});
        c.layers.push_back({"phasor_c", 256, 512, 1});
        c.layers.push_back({"phasor_c", 512, 512, 1});
        c.layers.push_back({"phasor_c", 512, 512, 1});
        c.layers.push_back({"phasor_c", 512, 512, 2});
        c.layers.push_back({"phasor_c", 512, 512, 1});
        c.layers.push_back({"phasor_c", 512, 512, 1});
        c.layers.push_back({"phasor_c", 512, 640, 1});
        c.layers.push_back({"phasor_c", 640, 1024, 1});
        c.dvc = {true, {{14, 8}, {8, 4}, {4, 1}}, 1024, {}};
        c.head = {3072, 1000};
    } else if (name == "psycho-eff-s") {
        c.input_size = 224;
        c.stem = {64, 7, 2, true};
        detail::add_resnet_stages(c, 4);
        c.layers.push_back({"phasor_i", 128, 256, 2, 0, true});
        c.layers.push_back({"phasor_c", 256, 256, 1, 0, true});
        c.layers.push_back({"phasor_c", 256, 512, 1, 0, true, true});
        c.layers.push_back({"phasor_c", 512, 512, 2, 0, true});
        c.layers.push_back({"phasor_c", 512, 512, 1, 0, true});
        c.layers.push_back({"phasor_c", 512, 768, 1, 0, true});
        c.dvc = {true, {{7, 4}, {4, 1}}, 768, {{14, 7}}};
        c.head = {2304, 1000};
    } else if (name == "psycho-eff-b") {
        c.input_size = 224;
        c.stem = {64, 7, 2, true};
        detail::add_resnet_stages(c, 4);
        c.layers.push_back({"phasor_i", 128, 256, 1, 0, true});
        c.layers.push_back({"phasor_c", 256, 512, 2, 0, true});
        c.layers.push_back({"phasor_c", 512, 512, 1, 0, true});
        c.layers.push_back({"phasor_c", 512, 512, 1, 0, true});
        c.layers.push_back({"phasor_c", 512, 512, 1, 0, true, true});
        c.layers.push_back({"phasor_c", 512, 768, 2, 0, true});
        c.layers.push_back({"phasor_c", 768, 768, 1, 0, true});
        c.layers.push_back({"phasor_c", 768, 768, 1, 0, true});
        c.dvc = {true, {{7, 4}, {4, 1}}, 768, {{14, 7}}};
        c.head = {2304, 1000};
    } else if (name == "psycho-eff-l") {
        c.input_size = 224;
        c.stem = {64, 7, 2, true};
        detail::add_resnet_stages(c, 8);
        c.layers.push_back({"phasor_i", 128, 256, 1, 0, true});
        c.layers.push_back({"phasor_c", 256, 512, 2, 0, true});
        for (int i = 0; i < 6; ++i)
            c.layers.push_back({"phasor_c", 512, 512, 1, 0, true, i == 5});
        c.layers.push_back({"phasor_c", 512, 1024, 2, 0, true});
        c.layers.push_back({"phasor_c", 1024, 1024, 1, 0, true});
        c.dvc = {true, {{7, 4}, {4, 1}}, 1024, {{14, 7}}};
        c.head = {3072, 1000};
    } else {
        throw std::invalid_argument(
            "unknown preset \"" + name +
            "\"; available: model-i, model-ii, model-iii, model-iv, model-i-micro, psycho-s, psycho-b, psycho-l, "
            "psycho-h, psycho-eff-s, psycho-eff-b, psycho-eff-l");
    }
    return c;
}

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"model-i",  "model-ii",     "model-iii",    "model-iv",
                                                   "model-i-micro", "psycho-s", "psycho-b",     "psycho-l",
                                                   "psycho-h", "psycho-eff-s", "psycho-eff-b", "psycho-eff-l"};
    return names;
}

}  // namespace psycho
