// Experiment CLI: train models on the causal-sequence task, recover graphs
// with the mutual-information oracle, build and check the explicit
// constructions, and run the property-verification suites.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "causaltf/construction.hpp"
#include "causaltf/experiment.hpp"
#include "causaltf/markov.hpp"
#include "causaltf/reduced_model.hpp"
#include "causaltf/theory.hpp"
#include "causaltf/verify_suites.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace causaltf;
using nlohmann::json;

namespace {

struct GlobalOpts {
    std::string config_path;
    uint64_t seed = 0;
    std::string out_dir = "out";
    int threads = 1;
    bool deterministic = false;
};

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

CausalGraph make_graph(const Config& cfg, Rng& rng) {
    std::string family = cfg.get("graph.family", std::string("chain"));
    int T = cfg.get("graph.T", 20);
    if (family == "chain") return CausalGraph::chain(T);
    if (family == "icl") return CausalGraph::icl(T);
    if (family == "random") {
        Rng grng = rng.stream(0x6a4f);
        return CausalGraph::random(T, cfg.get("graph.root_prob", 0.5), grng);
    }
    if (family == "file") {
        std::ifstream f(cfg.get("graph.path", std::string()));
        if (!f) throw std::runtime_error("cannot open graph file");
        std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return CausalGraph::from_json(text);
    }
    throw std::runtime_error("unknown graph family: " + family);
}

KernelPrior make_prior(const Config& cfg) {
    return KernelPrior(DirichletPrior{cfg.get("prior.S", 3), cfg.get("prior.alpha", 1.0)});
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

void write_outputs_common(const fs::path& out, const Config& cfg) {
    fs::create_directories(out);
    write_text(out / "config_echo.toml", cfg.echo());
}

Config resolve_config(const GlobalOpts& g) {
    Config cfg = g.config_path.empty() ? Config::parse("") : Config::load(g.config_path);
    cfg.set("run.seed", std::to_string(g.seed));
    cfg.set("run.threads", std::to_string(g.threads));
    cfg.set("run.deterministic", g.deterministic ? "true" : "false");
    return cfg;
}

int cmd_train(const GlobalOpts& g) {
    auto t0 = std::chrono::steady_clock::now();
    Config cfg = resolve_config(g);
    Rng rng(g.seed);
    CausalGraph graph = make_graph(cfg, rng);
    KernelPrior prior = make_prior(cfg);
    const int S = prior.alphabet_size();
    std::string mode = cfg.get("experiment.mode", std::string("reduced-staged"));
    cfg.set("experiment.mode", mode);
    fs::path out(g.out_dir);
    write_outputs_common(out, cfg);

    json metrics;
    metrics["mode"] = mode;
    metrics["T"] = graph.length();
    metrics["S"] = S;
    metrics["seed"] = g.seed;

    if (mode == "reduced-staged" || mode == "reduced-joint") {
        ReducedParams theta;
        TrainTrajectory traj;
        if (mode == "reduced-staged") {
            TrainConfig tc = TrainConfig::defaults(graph, S);
            tc.beta0 = cfg.get("train.beta0", tc.beta0);
            tc.eta1 = cfg.get("train.eta1", tc.eta1);
            tc.eta2 = cfg.get("train.eta2", tc.eta2);
            tc.tau1 = cfg.get("train.tau1", tc.tau1);
            tc.tau2 = cfg.get("train.tau2", tc.tau2);
            tc.epsilon = cfg.get("train.epsilon", tc.epsilon);
            tc.stage2_beta_target = cfg.get("train.beta_target", tc.stage2_beta_target);
            if (cfg.has("train.sequences")) {
                tc.est.exact_sequences = false;
                tc.est.n_sequences = 1;
                tc.est.n_prior = cfg.get("train.sequences", 4096);
            }
            std::tie(theta, traj) = train_algorithm1(graph, prior, tc, rng);
            metrics["beta0"] = tc.beta0;
            metrics["epsilon"] = tc.epsilon;
        } else {
            JointTrainConfig jc;
            jc.lr = cfg.get("train.lr", 0.3);
            jc.steps = cfg.get("train.steps", 1000);
            jc.batch = cfg.get("train.batch", 1024);
            std::tie(theta, traj) = train_joint(graph, prior, jc, rng);
        }
        write_text(out / "trajectory.csv", traj.to_csv());
        Matrix pattern = masked_row_softmax(theta.A1);
        write_pgm((out / "pattern.pgm").string(), pattern);
        write_pgm((out / "a1_raw.pgm").string(), theta.A1);
        save_checkpoint((out / "checkpoint.bin").string(), reduced_to_disentangled(theta));
        const auto& last = traj.records.back();
        metrics["loss"] = last.loss;
        metrics["loss_gap"] = last.loss_gap;
        metrics["loss_gap_eps_floor"] = last.loss - traj.l_star_eps;
        metrics["l_star"] = traj.l_star;
        metrics["l_star_eps"] = traj.l_star_eps;
        metrics["beta_final"] = last.beta;
        metrics["avg_attn"] = last.avg_attn;
        metrics["min_edge_softmax"] = last.min_edge_softmax;
        metrics["edge_softmax"] = last.edge_softmax;
        metrics["steps"] = static_cast<int>(traj.records.size());
    } else if (mode == "disentangled-joint") {
        JointRunConfig jc;
        jc.steps = cfg.get("train.steps", 1500);
        jc.batch = cfg.get("train.batch", 1024);
        jc.lr = cfg.get("train.lr", 0.3);
        jc.schedule_steps = cfg.get("train.schedule_steps", 131072);
        jc.threads = g.threads;
        JointRunResult res = train_disentangled_joint(graph, prior, jc, rng);
        std::ostringstream csv;
        csv << "step,stage,loss,loss_gap,beta,avg_attn,min_edge_softmax\n";
        csv.precision(17);
        for (const auto& r : res.records)
            csv << r.step << ",0," << r.loss << ",nan,nan," << r.avg_attn << "," << r.min_edge << "\n";
        write_text(out / "trajectory.csv", csv.str());
        write_pgm((out / "pattern.pgm").string(), res.params.position_pattern());
        Matrix block(graph.length(), graph.length());
        for (int i = 0; i < graph.length(); ++i)
            for (int j = 0; j < graph.length(); ++j) block(i, j) = res.params.A1(S + i, S + j);
        write_pgm((out / "a1_raw.pgm").string(), block);
        save_checkpoint((out / "checkpoint.bin").string(), res.params.to_disentangled());
        metrics["avg_attn"] = res.final_avg_attn;
        metrics["min_edge_softmax"] = res.final_min_edge;
        metrics["loss"] = res.records.back().loss;
        metrics["steps"] = jc.steps;
    } else {
        throw std::runtime_error("unknown experiment.mode: " + mode);
    }

    metrics["runtime_s"] = elapsed_s(t0);
    write_text(out / "metrics.json", metrics.dump(2) + "\n");
    std::cout << "train: done, avg_attn=" << metrics.value("avg_attn", 0.0) << " out=" << g.out_dir
              << "\n";
    return 0;
}

int cmd_oracle(const GlobalOpts& g) {
    auto t0 = std::chrono::steady_clock::now();
    Config cfg = resolve_config(g);
    Rng rng(g.seed);
    CausalGraph graph = make_graph(cfg, rng);
    KernelPrior prior = make_prior(cfg);
    fs::path out(g.out_dir);
    write_outputs_common(out, cfg);

    int n_samples = cfg.get("oracle.n_samples", 2000);
    Rng orng = rng.stream(0x0a0c1e);
    auto mi = idealized_g(graph, prior, n_samples, orng);
    double threshold = cfg.has("oracle.threshold") ? cfg.get("oracle.threshold", 0.0)
                                                   : default_oracle_threshold(mi);
    auto res = oracle_recover(mi, threshold);

    write_text(out / "mi.csv", mi_table_csv(mi));
    write_text(out / "recovered.json", res.graph.to_json() + "\n");
    std::ostringstream log;
    log << "i,chosen_parent,best_value,tie\n";
    for (const auto& d : res.decisions)
        log << d.i << "," << d.chosen_parent << "," << d.best_value << "," << (d.tie ? 1 : 0) << "\n";
    write_text(out / "oracle_log.csv", log.str());

    bool match = res.graph == graph;
    json metrics;
    metrics["n_samples"] = n_samples;
    metrics["threshold"] = threshold;
    metrics["recovered_equals_input"] = match;
    metrics["runtime_s"] = elapsed_s(t0);
    write_text(out / "metrics.json", metrics.dump(2) + "\n");
    std::cout << "oracle: recovered " << (match ? "matches" : "differs from") << " the input graph\n";
    return 0;
}

int cmd_construct(const GlobalOpts& g) {
    auto t0 = std::chrono::steady_clock::now();
    Config cfg = resolve_config(g);
    Rng rng(g.seed);
    KernelPrior prior = make_prior(cfg);
    const int S = prior.alphabet_size();
    fs::path out(g.out_dir);
    write_outputs_common(out, cfg);

    std::vector<double> betas;
    {
        std::istringstream bs(cfg.get("construct.betas", std::string("1,5,20,50")));
        std::string tok;
        while (std::getline(bs, tok, ',')) betas.push_back(std::stod(tok));
    }
    int n_seq = cfg.get("construct.n_sequences", 500);
    std::string kind = cfg.get("construct.kind", std::string("single"));

    FidelityReport rep;
    if (kind == "single") {
        CausalGraph graph = make_graph(cfg, rng);
        Rng krng = rng.stream(1);
        TransitionKernel pi = prior.sample(krng);
        Rng frng = rng.stream(2);
        rep = fidelity_report(graph, pi, n_seq, betas, frng);
        save_checkpoint((out / "checkpoint.bin").string(),
                        build_single_parent(graph, S, {betas.back(), betas.back()}));
    } else if (kind == "multi") {
        int T = cfg.get("graph.T", 24);
        int n = cfg.get("construct.ngram", 3);
        auto graph = MultiParentGraph::ngram(T, n);
        Rng krng = rng.stream(1);
        MultiKernel mk = sample_multi_kernel(S, n - 1, cfg.get("prior.alpha", 1.0), krng);
        Rng frng = rng.stream(2);
        rep = fidelity_report_multi(graph, mk, n_seq, betas, frng);
        save_checkpoint((out / "checkpoint.bin").string(),
                        build_multi_parent(graph, S, {betas.back(), betas.back()}));
    } else {
        throw std::runtime_error("construct.kind must be single or multi");
    }
    write_text(out / "fidelity.csv", rep.to_csv());

    json metrics;
    metrics["kind"] = kind;
    metrics["final_mean_err"] = rep.rows.back().mean_err;
    metrics["final_mean_err_full_index"] = rep.rows.back().mean_err_full;
    metrics["runtime_s"] = elapsed_s(t0);
    write_text(out / "metrics.json", metrics.dump(2) + "\n");
    std::cout << "construct: mean_err(beta=" << betas.back() << ") = " << rep.rows.back().mean_err << "\n";
    return 0;
}

int cmd_ood(const GlobalOpts& g, const std::string& checkpoint) {
    auto t0 = std::chrono::steady_clock::now();
    Config cfg = resolve_config(g);
    Rng rng(g.seed);
    CausalGraph graph = make_graph(cfg, rng);
    fs::path out(g.out_dir);
    write_outputs_common(out, cfg);

    DisentangledParams model = load_checkpoint(checkpoint);
    const int S = model.S;

    TransitionKernel tilde_pi = [&]() {
        std::string kind = cfg.get("ood.kernel", std::string("near_deterministic"));
        if (kind == "near_deterministic") {
            double delta = cfg.get("ood.delta", 0.05);
            Matrix r(S, S, delta);
            for (int s = 0; s < S; ++s) r(s, (s + 1) % S) = 1.0 - (S - 1) * delta;
            return TransitionKernel::from_rows(std::move(r));
        }
        if (kind == "from_prior") {
            Rng krng = rng.stream(3);
            return make_prior(cfg).sample(krng);
        }
        std::ifstream f(kind);
        if (!f) throw std::runtime_error("cannot open ood kernel file: " + kind);
        std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return TransitionKernel::from_json(text);
    }();

    Rng orng = rng.stream(4);
    OodStats st = run_ood(model, graph, tilde_pi, cfg.get("ood.n_sequences", 1000), orng);
    json metrics;
    metrics["mean"] = st.mean;
    metrics["q50"] = st.q50;
    metrics["q90"] = st.q90;
    metrics["q99"] = st.q99;
    metrics["max"] = st.max;
    metrics["n"] = st.n;
    metrics["min_entry"] = tilde_pi.min_entry();
    metrics["runtime_s"] = elapsed_s(t0);
    write_text(out / "metrics.json", metrics.dump(2) + "\n");
    std::cout << "ood: q99 sup-error = " << st.q99 << "\n";
    return 0;
}

int cmd_verify(const GlobalOpts& g, std::vector<std::string> suites) {
    if (suites.empty() || (suites.size() == 1 && suites[0] == "all")) suites = suite_names();
    bool all_pass = true;
    for (const auto& name : suites) {
        SuiteResult r = run_suite(name, g.seed);
        std::cout << (r.pass ? "PASS " : "FAIL ") << name << ": " << r.detail << "\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 2;
}

int cmd_sweep(const GlobalOpts& g) {
    auto t0 = std::chrono::steady_clock::now();
    Config cfg = resolve_config(g);
    fs::path out(g.out_dir);
    write_outputs_common(out, cfg);

    const int n_graphs = cfg.get("sweep.n_graphs", 20);
    const int T = cfg.get("graph.T", 20);
    const double root_prob = cfg.get("graph.root_prob", 0.5);
    KernelPrior prior = make_prior(cfg);
    JointRunConfig jc;
    jc.steps = cfg.get("sweep.steps", 1500);
    jc.batch = cfg.get("sweep.batch", 1024);
    jc.lr = cfg.get("sweep.lr", 0.3);
    jc.threads = g.threads;

    std::ostringstream csv;
    csv << "graph_id,avg_attn,min_edge,loss\n";
    double sum = 0.0, sumsq = 0.0;
    for (int n = 0; n < n_graphs; ++n) {
        Rng grng(g.seed ^ (0x9e3779b97f4a7c15ull + n));
        CausalGraph graph = CausalGraph::random(T, root_prob, grng);
        Rng trng = grng.stream(0x7124);
        JointRunResult res = train_disentangled_joint(graph, prior, jc, trng);
        csv << n << "," << res.final_avg_attn << "," << res.final_min_edge << ","
            << res.records.back().loss << "\n";
        sum += res.final_avg_attn;
        sumsq += res.final_avg_attn * res.final_avg_attn;
        std::cout << "graph " << n << ": avg_attn = " << res.final_avg_attn << "\n";
    }
    double mean = sum / n_graphs;
    double sd = std::sqrt(std::max(0.0, sumsq / n_graphs - mean * mean));
    write_text(out / "sweep.csv", csv.str());
    json metrics;
    metrics["n_graphs"] = n_graphs;
    metrics["avg_attn_mean"] = mean;
    metrics["avg_attn_std"] = sd;
    metrics["steps"] = jc.steps;
    metrics["runtime_s"] = elapsed_s(t0);
    write_text(out / "metrics.json", metrics.dump(2) + "\n");
    std::cout << "sweep: avg_attn mean = " << mean << " std = " << sd << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"causal-structure transformer lab"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "config file (key = value with [sections])");
    app.add_option("--seed", g.seed, "rng seed");
    app.add_option("--out", g.out_dir, "output directory");
    app.add_option("--threads", g.threads, "worker threads for batch gradients");
    app.add_flag("--deterministic", g.deterministic, "force ordered reductions");

    auto* train = app.add_subcommand("train", "train a model and write trajectory/metrics");
    auto* oracle = app.add_subcommand("oracle", "recover the graph from idealized gradients");
    auto* construct = app.add_subcommand("construct", "build explicit weights and report fidelity");
    auto* ood = app.add_subcommand("ood", "evaluate a checkpoint on an out-of-distribution kernel");
    std::string checkpoint;
    ood->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    auto* verify = app.add_subcommand("verify", "run property suites (exit 2 on failure)");
    std::vector<std::string> suites;
    verify->add_option("suites", suites, "suite names or 'all'");
    auto* sweep = app.add_subcommand("sweep", "train on many random graphs, report avg-attn stats");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(g);
        if (oracle->parsed()) return cmd_oracle(g);
        if (construct->parsed()) return cmd_construct(g);
        if (ood->parsed()) return cmd_ood(g, checkpoint);
        if (verify->parsed()) return cmd_verify(g, suites);
        if (sweep->parsed()) return cmd_sweep(g);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
