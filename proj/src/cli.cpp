#include "dmg/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dmg/data.hpp"
#include "dmg/diffusion.hpp"
#include "dmg/metrics.hpp"
#include "dmg/svg.hpp"
#include "dmg/vae.hpp"

namespace dmg {

namespace fs = std::filesystem;

namespace {

std::string default_out_dir() {
    if (const char* env = std::getenv("DMG_OUT")) return env;
    return "out";
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct PipelineHandles {
    Dataset ds;
    ParameterStore vae_store;
    VaeConfig vae_cfg;
    LoadedEvaluator eval;
    DiffusionModel diff;
};

PipelineHandles load_pipeline(const std::string& data_dir, const std::string& vae_path,
                              const std::string& eval_path, const std::string& diff_path) {
    PipelineHandles h;
    h.ds = load_dataset(data_dir);
    auto [vs, vc] = load_vae(vae_path);
    h.vae_store = std::move(vs);
    h.vae_cfg = vc;
    h.eval = load_evaluator(eval_path);
    h.diff = load_diffusion(diff_path);
    return h;
}

void add_common_model_opts(CLI::App* cmd, std::string& data_dir, std::string& vae_path,
                           std::string& eval_path, std::string& diff_path) {
    cmd->add_option("--data", data_dir, "dataset directory")->required();
    cmd->add_option("--vae", vae_path, "motion VAE checkpoint")->required();
    cmd->add_option("--eval", eval_path, "evaluator checkpoint (frozen text encoder)")->required();
    cmd->add_option("--diffusion", diff_path, "diffusion checkpoint")->required();
}

void report_oracle(std::span<const Array<f32>> motions) {
    for (size_t i = 0; i < motions.size(); ++i) {
        auto [p, g] = oracle_classify(motions[i]);
        std::cout << nlohmann::json{{"index", i}, {"path", p}, {"gesture", g}}.dump() << '\n';
    }
}

} // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"compositional motion generation workbench"};
    app.set_config("--config", "", "key=value config file (flags win)");
    app.require_subcommand(1);

    // ---- gen-data ---------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic trajectory dataset");
    struct {
        std::string out = default_out_dir() + "/data";
        uint64_t seed = 0;
        int train = 4000, test = 800, heldout = 200;
        std::string heldout_pairs = "zigzag:wave_left,circle:raise_both";
    } gd;
    gen->add_option("--out", gd.out, "output directory");
    gen->add_option("--seed", gd.seed, "generator seed");
    gen->add_option("--train", gd.train, "train sample count");
    gen->add_option("--test", gd.test, "test sample count");
    gen->add_option("--heldout", gd.heldout, "held-out pair sample count");
    gen->add_option("--heldout-pairs", gd.heldout_pairs, "comma list of path:gesture pairs");
    gen->callback([&] {
        DatasetConfig cfg;
        cfg.seed = gd.seed;
        cfg.train_count = gd.train;
        cfg.test_count = gd.test;
        cfg.heldout_count = gd.heldout;
        cfg.heldout_pairs.clear();
        for (const auto& item : split_csv(gd.heldout_pairs)) {
            auto colon = item.find(':');
            if (colon == std::string::npos) fail("gen-data: bad pair '", item, "'");
            cfg.heldout_pairs.emplace_back(item.substr(0, colon), item.substr(colon + 1));
        }
        save_dataset(generate_dataset(cfg), gd.out);
        std::cout << "manifest " << hex64(manifest_fingerprint(gd.out)) << '\n';
    });

    // ---- train-vae --------------------------------------------------------
    auto* tv = app.add_subcommand("train-vae", "train the motion VAE");
    struct {
        std::string data, out = default_out_dir() + "/vae.dmgc", log;
        VaeConfig cfg;
    } tva;
    tv->add_option("--data", tva.data, "dataset directory")->required();
    tv->add_option("--out", tva.out, "checkpoint path");
    tv->add_option("--log", tva.log, "JSON-lines training log");
    tv->add_option("--epochs", tva.cfg.epochs, "training epochs");
    tv->add_option("--batch", tva.cfg.batch, "batch size");
    tv->add_option("--lr", tva.cfg.lr, "learning rate");
    tv->add_option("--kl-weight", tva.cfg.kl_weight, "KL weight");
    tv->add_option("--width", tva.cfg.width, "channel width");
    tv->add_option("--dz", tva.cfg.d_z, "latent channels");
    tv->add_option("--seed", tva.cfg.seed, "training seed");
    tv->callback([&] {
        Dataset ds = load_dataset(tva.data);
        fs::create_directories(fs::path(tva.out).parent_path().empty()
                                   ? "."
                                   : fs::path(tva.out).parent_path().string());
        std::string log = tva.log.empty() ? tva.out + ".log.jsonl" : tva.log;
        auto res = train_vae(ds, tva.cfg, log);
        if (res.aborted) fail("train-vae: diverged; last good checkpoint kept");
        save_vae(res.store, tva.cfg, tva.out);
        std::cout << "checkpoint " << hex64(res.store.fingerprint()) << '\n';
    });

    // ---- train-eval -------------------------------------------------------
    auto* te = app.add_subcommand("train-eval", "train the contrastive evaluator");
    struct {
        std::string data, out = default_out_dir() + "/eval.dmgc", log;
        EvaluatorConfig cfg;
        TextEncoderConfig text_cfg;
    } tea;
    te->add_option("--data", tea.data, "dataset directory")->required();
    te->add_option("--out", tea.out, "checkpoint path");
    te->add_option("--log", tea.log, "JSON-lines training log");
    te->add_option("--epochs", tea.cfg.epochs, "training epochs");
    te->add_option("--batch", tea.cfg.batch, "batch size");
    te->add_option("--lr", tea.cfg.lr, "learning rate");
    te->add_option("--feat-dim", tea.cfg.feat_dim, "feature dimension");
    te->add_option("--width", tea.cfg.width, "motion tower width");
    te->add_option("--temperature", tea.cfg.temperature, "contrastive temperature");
    te->add_option("--seed", tea.cfg.seed, "training seed");
    te->callback([&] {
        Dataset ds = load_dataset(tea.data);
        std::string log = tea.log.empty() ? tea.out + ".log.jsonl" : tea.log;
        auto res = train_evaluator(ds, tea.cfg, tea.text_cfg, log);
        if (res.aborted) fail("train-eval: diverged");
        save_evaluator(res.store, tea.cfg, tea.text_cfg, tea.out);
        std::cout << "checkpoint " << hex64(res.store.fingerprint()) << '\n';
    });

    // ---- train-diffusion --------------------------------------------------
    auto* td = app.add_subcommand("train-diffusion", "train the compositional denoiser");
    struct {
        std::string data, vae, eval, out = default_out_dir() + "/diffusion.dmgc", log;
        std::string variant = "exp", mode = "latent", agg = "mean";
        DiffusionTrainConfig cfg;
        f32 alpha_o = -1.0f; // sentinel: default depends on mode
    } tda;
    td->add_option("--data", tda.data, "dataset directory")->required();
    td->add_option("--vae", tda.vae, "frozen VAE checkpoint")->required();
    td->add_option("--eval", tda.eval, "evaluator checkpoint (frozen text encoder)")->required();
    td->add_option("--out", tda.out, "checkpoint path");
    td->add_option("--log", tda.log, "JSON-lines training log");
    td->add_option("--variant", tda.variant, "exp|oss|sc")
        ->check(CLI::IsMember({"exp", "oss", "sc"}));
    td->add_option("--mode", tda.mode, "latent|semantic")
        ->check(CLI::IsMember({"latent", "semantic"}));
    td->add_option("--k", tda.cfg.variant.k, "number of concepts");
    td->add_option("--tau", tda.cfg.variant.tau, "text replacement rate");
    td->add_option("--alpha-o", tda.alpha_o, "orthogonality weight");
    td->add_option("--alpha-sc", tda.cfg.variant.alpha_sc, "consistency weight");
    td->add_option("--agg", tda.agg, "mean|sum")->check(CLI::IsMember({"mean", "sum"}));
    td->add_option("--steps", tda.cfg.steps, "optimizer steps");
    td->add_option("--batch", tda.cfg.batch, "batch size");
    td->add_option("--lr", tda.cfg.lr, "learning rate");
    td->add_option("--t-steps", tda.cfg.t_steps, "diffusion steps T");
    td->add_option("--den-width", tda.cfg.den.width, "denoiser width");
    td->add_option("--den-blocks", tda.cfg.den.blocks, "denoiser blocks");
    td->add_option("--den-heads", tda.cfg.den.heads, "denoiser heads");
    td->add_option("--seed", tda.cfg.seed, "training seed");
    td->callback([&] {
        Dataset ds = load_dataset(tda.data);
        auto [vae_store, vae_cfg] = load_vae(tda.vae);
        LoadedEvaluator ev = load_evaluator(tda.eval);
        tda.cfg.variant.variant = variant_from_name(tda.variant);
        tda.cfg.variant.mode = mode_from_name(tda.mode);
        tda.cfg.variant.agg = tda.agg == "sum" ? Aggregation::Sum : Aggregation::Mean;
        tda.cfg.variant.alpha_o =
            tda.alpha_o < 0 ? default_alpha_o(tda.cfg.variant.mode) : tda.alpha_o;
        tda.cfg.den.temb_dim = tda.cfg.den.width; // timestep embedding matches model width
        std::string log = tda.log.empty() ? tda.out + ".log.jsonl" : tda.log;
        DiffusionModel model =
            train_diffusion(ds, vae_cfg, vae_store, ev.text_cfg, ev.store, tda.cfg, log);
        save_diffusion(model, tda.out);
        std::cout << "checkpoint " << hex64(model.params.fingerprint()) << '\n';
    });

    // ---- sample -----------------------------------------------------------
    auto* sc = app.add_subcommand("sample", "text-to-motion generation");
    struct {
        std::string data, vae, eval, diffusion;
        std::string texts;
        std::string out = default_out_dir() + "/samples.dmg1";
        uint64_t seed = 0;
        int steps = 50, count = 1;
    } sa;
    add_common_model_opts(sc, sa.data, sa.vae, sa.eval, sa.diffusion);
    sc->add_option("--texts", sa.texts, "comma list of concept texts")->required();
    sc->add_option("--out", sa.out, "output DMG1 file");
    sc->add_option("--seed", sa.seed, "sampling seed");
    sc->add_option("--steps", sa.steps, "reverse steps");
    sc->add_option("--count", sa.count, "number of motions");
    sc->callback([&] {
        auto h = load_pipeline(sa.data, sa.vae, sa.eval, sa.diffusion);
        ConditionLibrary lib(h.eval.store, h.eval.text_cfg);
        auto conds = texts_condition(h.diff, lib, split_csv(sa.texts));
        std::vector<std::vector<Array<f32>>> sets(static_cast<size_t>(sa.count), conds);
        auto motions =
            generate_motions(h.diff, h.ds, h.vae_cfg, h.vae_store, sets, sa.steps, sa.seed);
        fs::create_directories(fs::path(sa.out).parent_path().empty()
                                   ? "."
                                   : fs::path(sa.out).parent_path().string());
        write_dmg1(sa.out, motions);
        report_oracle(motions);
    });

    // ---- decompose --------------------------------------------------------
    auto* dc = app.add_subcommand("decompose", "decompositional generation (one chain per concept)");
    struct {
        std::string data, vae, eval, diffusion;
        std::string texts;
        std::string out = default_out_dir() + "/decomposed.dmg1";
        uint64_t seed = 0;
        int steps = 50;
    } da;
    add_common_model_opts(dc, da.data, da.vae, da.eval, da.diffusion);
    dc->add_option("--texts", da.texts, "comma list of concept texts (one chain each)")
        ->required();
    dc->add_option("--out", da.out, "output DMG1 file");
    dc->add_option("--seed", da.seed, "sampling seed");
    dc->add_option("--steps", da.steps, "reverse steps");
    dc->callback([&] {
        auto h = load_pipeline(da.data, da.vae, da.eval, da.diffusion);
        ConditionLibrary lib(h.eval.store, h.eval.text_cfg);
        auto texts = split_csv(da.texts);
        std::vector<Array<f32>> conds;
        for (const auto& t : texts) conds.push_back(lib.concept_emb(t));
        Rng root(da.seed);
        std::vector<uint64_t> seeds;
        for (size_t i = 0; i < conds.size(); ++i) seeds.push_back(root.fork(i).root_seed());
        auto motions =
            generate_decomposed(h.diff, h.ds, h.vae_cfg, h.vae_store, conds, seeds, da.steps);
        fs::create_directories(fs::path(da.out).parent_path().empty()
                                   ? "."
                                   : fs::path(da.out).parent_path().string());
        write_dmg1(da.out, motions);
        report_oracle(motions);
    });

    // ---- recombine --------------------------------------------------------
    auto* rc = app.add_subcommand("recombine", "compose two concepts into one motion");
    struct {
        std::string data, vae, eval, diffusion;
        std::string c1, c2;
        std::string out = default_out_dir() + "/recombined.dmg1";
        uint64_t seed = 0;
        int steps = 50, count = 1;
    } ra;
    add_common_model_opts(rc, ra.data, ra.vae, ra.eval, ra.diffusion);
    rc->add_option("--concept1", ra.c1, "first concept text")->required();
    rc->add_option("--concept2", ra.c2, "second concept text")->required();
    rc->add_option("--out", ra.out, "output DMG1 file");
    rc->add_option("--seed", ra.seed, "sampling seed");
    rc->add_option("--steps", ra.steps, "reverse steps");
    rc->add_option("--count", ra.count, "number of motions");
    rc->callback([&] {
        auto h = load_pipeline(ra.data, ra.vae, ra.eval, ra.diffusion);
        ConditionLibrary lib(h.eval.store, h.eval.text_cfg);
        auto conds = texts_condition(h.diff, lib, {ra.c1, ra.c2});
        std::vector<std::vector<Array<f32>>> sets(static_cast<size_t>(ra.count), conds);
        auto motions =
            generate_motions(h.diff, h.ds, h.vae_cfg, h.vae_store, sets, ra.steps, ra.seed);
        fs::create_directories(fs::path(ra.out).parent_path().empty()
                                   ? "."
                                   : fs::path(ra.out).parent_path().string());
        write_dmg1(ra.out, motions);
        report_oracle(motions);
    });

    // ---- eval -------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "full metric report");
    struct {
        std::string data, vae, eval, diffusion;
        std::string report = default_out_dir() + "/report.json";
        EvalProtocolConfig cfg;
    } ea;
    add_common_model_opts(ev, ea.data, ea.vae, ea.eval, ea.diffusion);
    ev->add_option("--report", ea.report, "metric report JSON path");
    ev->add_option("--n-gen", ea.cfg.n_gen, "holistic generations");
    ev->add_option("--pool", ea.cfg.pool_size, "retrieval pool size");
    ev->add_option("--decomposition-seeds", ea.cfg.decomposition_seeds,
                   "decomposition scoring runs");
    ev->add_option("--recombination-seeds", ea.cfg.recombination_seeds,
                   "recombination scoring runs");
    ev->add_option("--mmodality-texts", ea.cfg.mmodality_texts, "texts for the modality metric");
    ev->add_option("--mmodality-repeats", ea.cfg.mmodality_repeats, "repeats per text");
    ev->add_option("--steps", ea.cfg.sample_steps, "reverse steps");
    ev->add_option("--seed", ea.cfg.seed, "evaluation seed");
    ev->callback([&] {
        auto h = load_pipeline(ea.data, ea.vae, ea.eval, ea.diffusion);
        MetricReport rep = full_evaluation(h.diff, h.ds, h.vae_cfg, h.vae_store, h.eval.store,
                                           h.eval.cfg, h.eval.text_cfg, ea.cfg);
        fs::create_directories(fs::path(ea.report).parent_path().empty()
                                   ? "."
                                   : fs::path(ea.report).parent_path().string());
        std::ofstream f(ea.report, std::ios::trunc);
        if (!f) fail("eval: cannot write '", ea.report, "'");
        f << rep.to_json() << '\n';
        std::cout << rep.to_table();
    });

    // ---- export -----------------------------------------------------------
    auto* ex = app.add_subcommand("export", "render motions to SVG and CSV");
    struct {
        std::string in;
        std::string out = default_out_dir() + "/export";
        bool svg = false;
    } xa;
    ex->add_option("--in", xa.in, "input DMG1 file")->required();
    ex->add_option("--out", xa.out, "output directory");
    ex->add_flag("--svg", xa.svg, "also write SVG renderings");
    ex->callback([&] {
        auto motions = read_dmg1(xa.in);
        fs::create_directories(xa.out);
        for (size_t i = 0; i < motions.size(); ++i) {
            char base[32];
            std::snprintf(base, sizeof base, "motion_%03zu", i);
            export_motion_csv(motions[i], (fs::path(xa.out) / (std::string(base) + ".csv")).string());
            if (xa.svg)
                export_motion_svg(motions[i],
                                  (fs::path(xa.out) / (std::string(base) + ".svg")).string());
        }
        std::cout << "exported " << motions.size() << " motions to " << xa.out << '\n';
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n' << app.help() << '\n';
        return 2;
    } catch (const FileNotFound& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace dmg
