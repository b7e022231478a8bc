#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "psycho/analysis.hpp"
#include "psycho/gradcheck.hpp"
#include "psycho/train.hpp"

using namespace psycho;
namespace fs = std::filesystem;

namespace {

ModelConfig resolve_config(const std::string& spec) {
    if (fs::exists(spec)) {
        std::ifstream f(spec);
        json j = json::parse(f);
        return parse_config(j);
    }
    return preset_config(spec);
}

Recipe resolve_recipe(const std::string& path) {
    if (path.empty()) return Recipe{};
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("recipe file not found: " + path);
    return parse_recipe(json::parse(f));
}

std::string data_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("PSYCHO_DATA_DIR")) return env;
    return "./data/cifar-10-batches-bin";
}

void prepare_out_dir(const std::string& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw std::invalid_argument("output directory " + dir + " is not empty; pass --force to overwrite");
    fs::create_directories(dir);
}

void prepare_out_file(const std::string& path, bool force) {
    if (fs::exists(path) && !force)
        throw std::invalid_argument("output file " + path + " exists; pass --force to overwrite");
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
}

template <typename T>
void take_subset(Dataset<T>& d, int64_t n) {
    if (n <= 0 || n >= d.images.shape[0]) return;
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    d.images = gather_images(d.images, idx);
    d.labels.resize(static_cast<size_t>(n));
}

// ---------------------------------------------------------------------------

template <typename T>
int run_train(const std::string& config, const std::string& recipe_path, const std::string& data,
              const std::string& out, const std::string& resume, int64_t subset, int64_t test_subset, bool force,
              uint64_t seed_override, bool have_seed) {
    ModelConfig cfg = resolve_config(config);
    Recipe recipe = resolve_recipe(recipe_path);
    if (have_seed) recipe.seed = seed_override;
    prepare_out_dir(out, force || !resume.empty());

    Cifar10<T> ds = load_cifar10<T>(data_dir(data));
    take_subset(ds.train, subset);
    take_subset(ds.test, test_subset);

    Rng rng(recipe.seed);
    Model<T> model(rng, cfg);
    std::ofstream metrics(out + "/metrics.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);

    TrainResult res = train(model, ds.train, ds.test, recipe, out, metrics, resume, &std::cerr);
    json summary = {{"name", cfg.name},
                    {"best_acc", res.best_acc},
                    {"final_loss", res.final_loss},
                    {"best_checkpoint", res.best_path}};
    std::cout << summary.dump() << "\n";
    return 0;
}

template <typename T>
int run_eval(const std::string& ckpt, const std::string& data, const std::string& split, int64_t subset) {
    json manifest = read_checkpoint_manifest(ckpt);
    ModelConfig cfg = parse_config(manifest.at("config"));
    Rng rng(1);
    Model<T> model(rng, cfg);
    load_checkpoint(ckpt, model, static_cast<AdamW<T>*>(nullptr));

    Cifar10<T> ds = load_cifar10<T>(data_dir(data));
    Dataset<T>& d = split == "train" ? ds.train : ds.test;
    take_subset(d, subset);
    const double acc = evaluate(model, d.images, d.labels);
    json out = {{"name", cfg.name}, {"split", split}, {"n", d.images.shape[0]}, {"top1", acc}};
    std::cout << out.dump() << "\n";
    return 0;
}

int run_count(const std::string& config) {
    ModelConfig cfg = resolve_config(config);
    Rng rng(1);
    Model<float> model(rng, cfg);
    auto [overall, cplx] = model.count_layers();
    json out = {{"name", cfg.name},
                {"params", model.count_params()},
                {"layers_overall", overall},
                {"layers_complex", cplx}};
    std::cout << out.dump() << "\n";
    return 0;
}

template <typename T>
int run_viz_filters(const std::string& ckpt, int branch, int64_t k, const std::string& out, bool force) {
    json manifest = read_checkpoint_manifest(ckpt);
    ModelConfig cfg = parse_config(manifest.at("config"));
    Rng rng(1);
    Model<T> model(rng, cfg);
    load_checkpoint(ckpt, model, static_cast<AdamW<T>*>(nullptr));
    if (!cfg.dvc.enabled) throw std::invalid_argument("model " + cfg.name + " has no filter-bank stage");
    if (branch < 0 || branch >= static_cast<int>(model.dvc.blocks.size()))
        throw std::invalid_argument("branch " + std::to_string(branch) + " out of range");
    prepare_out_dir(out, force);

    auto& hb = model.dvc.blocks[static_cast<size_t>(branch)];
    FilterPCA<T> pca = filter_pca(hb.w_re->value, hb.w_im->value, k);
    json files = json::array();
    for (int64_t q = 0; q < k; ++q) {
        const std::string path = out + "/branch" + std::to_string(branch) + "-pc" + std::to_string(q + 1) + ".pgm";
        emit_image(pca.images[static_cast<size_t>(q)], path);
        files.push_back({{"path", path}, {"eigenvalue", pca.eigenvalues[static_cast<size_t>(q)]}});
    }
    std::cout << json{{"name", cfg.name}, {"branch", branch}, {"components", files}}.dump() << "\n";
    return 0;
}

template <typename T>
int run_viz_cam(const std::string& ckpt, const std::string& data, int64_t index, int label, int layer,
                const std::string& mask_kind, int branch, int64_t channel, const std::string& out, bool force) {
    json manifest = read_checkpoint_manifest(ckpt);
    ModelConfig cfg = parse_config(manifest.at("config"));
    Rng rng(1);
    Model<T> model(rng, cfg);
    load_checkpoint(ckpt, model, static_cast<AdamW<T>*>(nullptr));

    Cifar10<T> ds = load_cifar10<T>(data_dir(data));
    if (index < 0 || index >= ds.test.images.shape[0]) throw std::invalid_argument("image index out of range");
    Tensor<T> img = gather_images(ds.test.images, {index}).reshaped({3, 32, 32});
    const int lbl = label >= 0 ? label : ds.test.labels[static_cast<size_t>(index)];
    if (layer < 0) {  // default: last phasor block
        for (size_t i = 0; i < cfg.layers.size(); ++i)
            if (cfg.layers[i].type == "phasor_i" || cfg.layers[i].type == "phasor_c") layer = static_cast<int>(i);
        if (layer < 0) throw std::invalid_argument("model " + cfg.name + " has no phasor block to visualize");
    }

    prepare_out_file(out, force);
    SalienceMap<T> sm = hirescam_masked(model, img, lbl, layer, {mask_kind, branch, channel});
    emit_image(sm.values, out);
    std::cout << json{{"path", out}, {"label", lbl}, {"source", sm.source}, {"conditioning", sm.conditioning}}.dump()
              << "\n";
    return 0;
}

template <typename T>
int run_project(const std::string& ckpt, const std::string& data, int64_t n, const std::string& out, bool force) {
    json manifest = read_checkpoint_manifest(ckpt);
    ModelConfig cfg = parse_config(manifest.at("config"));
    Rng rng(1);
    Model<T> model(rng, cfg);
    load_checkpoint(ckpt, model, static_cast<AdamW<T>*>(nullptr));
    model.set_training(false);

    Cifar10<T> ds = load_cifar10<T>(data_dir(data));
    take_subset(ds.test, n);
    const int64_t N = ds.test.images.shape[0];

    Tensor<T> re({N, cfg.head.d_in}), im({N, cfg.head.d_in});
    {
        NoGrad ng;
        for (int64_t b0 = 0; b0 < N; b0 += 64) {
            std::vector<int64_t> idx;
            for (int64_t i = b0; i < std::min(N, b0 + 64); ++i) idx.push_back(i);
            CVar<T> feat = model.features(leaf(gather_images(ds.test.images, idx)));
            for (size_t i = 0; i < idx.size(); ++i)
                for (int64_t j = 0; j < cfg.head.d_in; ++j) {
                    re[idx[i] * cfg.head.d_in + j] = feat.re->value[static_cast<int64_t>(i) * cfg.head.d_in + j];
                    im[idx[i] * cfg.head.d_in + j] = feat.im->value[static_cast<int64_t>(i) * cfg.head.d_in + j];
                }
        }
    }
    Tensor<T> coords = feature_projection(re, im);
    prepare_out_file(out, force);
    std::ofstream f(out);
    for (int64_t i = 0; i < N; ++i)
        f << coords[i * 2] << "," << coords[i * 2 + 1] << "," << ds.test.labels[static_cast<size_t>(i)] << "\n";
    std::cout << json{{"path", out}, {"n", N}}.dump() << "\n";
    return 0;
}

// quick built-in verification: spectral identities and gradient checks
int run_selftest() {
    using D = double;
    int failed = 0;
    auto report = [&](const std::string& name, bool ok) {
        std::cout << (ok ? "PASS  " : "FAIL  ") << name << "\n";
        if (!ok) ++failed;
    };

    {
        Rng rng(3);
        Tensor<D> re = random_normal<D>(rng, {1, 1, 6, 6});
        Tensor<D> im = random_normal<D>(rng, {1, 1, 6, 6});
        Tensor<D> fr = re, fi = im;
        fft2_inplace(fr, fi, false);
        Tensor<D> nr, ni;
        dft2_naive(re, im, nr, ni, false);
        double err = 0;
        for (int64_t i = 0; i < 36; ++i) err = std::max({err, std::abs(fr[i] - nr[i]), std::abs(fi[i] - ni[i])});
        report("fft matches naive dft (6x6)", err < 1e-9);

        Tensor<D> br = fr, bi = fi;
        fft2_inplace(br, bi, true);
        double rerr = 0;
        for (int64_t i = 0; i < 36; ++i) rerr = std::max({rerr, std::abs(br[i] - re[i]), std::abs(bi[i] - im[i])});
        report("fft roundtrip", rerr < 1e-6);

        double e_sp = 0, e_fr = 0;
        for (int64_t i = 0; i < 36; ++i) {
            e_sp += re[i] * re[i] + im[i] * im[i];
            e_fr += fr[i] * fr[i] + fi[i] * fi[i];
        }
        report("energy conservation", std::abs(e_sp - e_fr / 36.0) / e_sp < 1e-6);
    }
    {
        Rng rng(5);
        ComplexBatchNorm<D> cbn(3);
        Tensor<D> a = random_normal<D>(rng, {4, 3, 5, 5}, 2.0);
        Tensor<D> b = random_normal<D>(rng, {4, 3, 5, 5}, 2.0);
        CVar<D> y = cbn.whiten({leaf(a), leaf(b)});
        double worst = 0;
        const int64_t hw = 25;
        for (int64_t c = 0; c < 3; ++c) {
            double mr = 0, vrr = 0, vii = 0, vri = 0;
            for (int64_t n = 0; n < 4; ++n)
                for (int64_t i = 0; i < hw; ++i) {
                    const double yr = y.re->value[(n * 3 + c) * hw + i], yi = y.im->value[(n * 3 + c) * hw + i];
                    mr += yr;
                    vrr += yr * yr;
                    vii += yi * yi;
                    vri += yr * yi;
                }
            const double m = 4 * hw;
            worst = std::max({worst, std::abs(mr / m), std::abs(vrr / m - 1), std::abs(vii / m - 1),
                              std::abs(vri / m)});
        }
        report("complex batchnorm whitening", worst < 1e-5);
    }
    {
        const std::vector<SubBandSpec> specs = {{8, 4}, {4, 1}};
        std::set<std::pair<int64_t, int64_t>> cover;
        bool ok = true;
        for (const auto& s : specs)
            for (const auto& p : retained_indices(s, 16))
                if (!cover.insert(p).second) ok = false;
        report("sub-band disjointness [8,4]+[4,1]", ok);
    }
    {
        Rng rng(11);
        Model<D> m(rng, preset_config("model-i-micro"));
        m.set_training(true);
        Tensor<D> x = random_normal<D>(rng, {2, 3, 8, 8});
        Var<D> vx = leaf(std::move(x));
        auto loss = [&]() { return cross_entropy(m.forward(vx), {0, 1}); };
        ParamList<D> ps;
        m.collect(ps);
        std::vector<Var<D>> leaves;
        for (auto& p : ps) leaves.push_back(p.v);
        leaves.push_back(vx);
        report("end-to-end gradient check", gradcheck<D>(loss, leaves, 1e-4, 4) < 1e-4);
    }
    if (failed) {
        std::cerr << failed << " selftest check(s) failed\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"psychovisual frequency-domain network toolkit"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker threads (only 1 is supported; kept for compatibility)");
    bool f64 = false;
    app.add_flag("--f64", f64, "run in 64-bit floating point");

    std::string config, recipe, data, out, resume, ckpt, split = "test", mask = "all";
    int64_t subset = 0, test_subset = 0, k = 3, index = 0, channel = -1, n_project = 512;
    int branch = 0, label = -1, layer = -1;
    bool force = false;
    uint64_t seed = 0;

    CLI::App* c_train = app.add_subcommand("train", "train a model");
    c_train->add_option("--config", config, "preset name or config json")->required();
    c_train->add_option("--recipe", recipe, "recipe json (defaults embedded)");
    c_train->add_option("--data", data, "cifar-10 binary dir (or PSYCHO_DATA_DIR)");
    c_train->add_option("--out", out, "output directory")->required();
    c_train->add_option("--resume", resume, "checkpoint to resume from");
    c_train->add_option("--subset", subset, "limit training samples");
    c_train->add_option("--test-subset", test_subset, "limit held-out samples");
    auto* seed_opt = c_train->add_option("--seed", seed, "override recipe seed");
    c_train->add_flag("--force", force, "allow writing into a non-empty directory");

    CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    c_eval->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    c_eval->add_option("--data", data, "cifar-10 binary dir");
    c_eval->add_option("--split", split, "train|test")->check(CLI::IsMember({"train", "test"}));
    c_eval->add_option("--subset", subset, "limit samples");

    CLI::App* c_count = app.add_subcommand("count", "print parameter and layer counts");
    c_count->add_option("--config", config, "preset name or config json")->required();

    CLI::App* c_filters = app.add_subcommand("viz-filters", "principal components of a filter bank");
    c_filters->add_option("--checkpoint", ckpt)->required();
    c_filters->add_option("--branch", branch, "sub-band branch index");
    c_filters->add_option("-k,--components", k, "component count");
    c_filters->add_option("--out", out, "output directory")->required();
    c_filters->add_flag("--force", force);

    CLI::App* c_cam = app.add_subcommand("viz-cam", "gradient-masked salience map");
    c_cam->add_option("--checkpoint", ckpt)->required();
    c_cam->add_option("--data", data);
    c_cam->add_option("--index", index, "test-set image index");
    c_cam->add_option("--label", label, "class to explain (default: true label)");
    c_cam->add_option("--layer", layer, "target layer index (default: last phasor)");
    c_cam->add_option("--mask", mask)->check(CLI::IsMember({"all", "subband", "channel", "none"}));
    c_cam->add_option("--branch", branch, "sub-band for masking");
    c_cam->add_option("--channel", channel, "channel for masking");
    c_cam->add_option("--out", out, "output pgm path")->required();
    c_cam->add_flag("--force", force);

    CLI::App* c_project = app.add_subcommand("project", "2d projection of pooled features");
    c_project->add_option("--checkpoint", ckpt)->required();
    c_project->add_option("--data", data);
    c_project->add_option("-n,--samples", n_project, "sample count");
    c_project->add_option("--out", out, "output csv path")->required();
    c_project->add_flag("--force", force);

    app.add_subcommand("selftest", "run built-in numerical checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::ostringstream usage;
        usage << app.help();
        std::cerr << e.what() << "\n" << usage.str();
        return 1;
    }

    try {
        if (threads != 1) throw std::invalid_argument("--threads: only single-threaded execution is supported");
        if (app.got_subcommand("train"))
            return f64 ? run_train<double>(config, recipe, data, out, resume, subset, test_subset, force, seed,
                                           seed_opt->count() > 0)
                       : run_train<float>(config, recipe, data, out, resume, subset, test_subset, force, seed,
                                          seed_opt->count() > 0);
        if (app.got_subcommand("eval"))
            return f64 ? run_eval<double>(ckpt, data, split, subset) : run_eval<float>(ckpt, data, split, subset);
        if (app.got_subcommand("count")) return run_count(config);
        if (app.got_subcommand("viz-filters"))
            return f64 ? run_viz_filters<double>(ckpt, branch, k, out, force)
                       : run_viz_filters<float>(ckpt, branch, k, out, force);
        if (app.got_subcommand("viz-cam"))
            return f64 ? run_viz_cam<double>(ckpt, data, index, label, layer, mask, branch, channel, out, force)
                       : run_viz_cam<float>(ckpt, data, index, label, layer, mask, branch, channel, out, force);
        if (app.got_subcommand("project"))
            return f64 ? run_project<double>(ckpt, data, n_project, out, force)
                       : run_project<float>(ckpt, data, n_project, out, force);
        if (app.got_subcommand("selftest")) return run_selftest();
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
