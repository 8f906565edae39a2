#include "scdd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <toml++/toml.hpp>

#include "scdd/error.hpp"
#include "scdd/rng.hpp"

namespace scdd {

namespace {

/** Typed access to one TOML table that remembers which keys were consumed. */
class Section {
public:
    Section(const toml::table* table, std::string name) : my_table(table), my_name(std::move(name)) {}

    template <typename T>
    void get(const std::string& key, T& out) {
        const toml::node* node = find(key);
        if (!node) {
            return;
        }
        if constexpr (std::is_same_v<T, bool>) {
            out = require<bool>(*node, key, "a boolean");
        } else if constexpr (std::is_same_v<T, std::string>) {
            out = require<std::string>(*node, key, "a string");
        } else if constexpr (std::is_integral_v<T>) {
            const auto v = require<std::int64_t>(*node, key, "an integer");
            if (v < 0) {
                fail(key, "must be non-negative");
            }
            out = static_cast<T>(v);
        } else {
            if (auto i = node->value_exact<std::int64_t>()) {
                out = static_cast<double>(*i);
            } else {
                out = require<double>(*node, key, "a number");
            }
        }
    }

    template <typename T>
    void get_list(const std::string& key, std::vector<T>& out) {
        const toml::node* node = find(key);
        if (!node) {
            return;
        }
        const toml::array* arr = node->as_array();
        if (!arr) {
            fail(key, "expected an array");
        }
        std::vector<T> values;
        for (const auto& item : *arr) {
            T v{};
            toml::table wrapper;
            wrapper.insert(key, item);
            Section(&wrapper, my_name).get(key, v);
            values.push_back(v);
        }
        out = std::move(values);
    }

    void allow(const std::string& key) { my_used.insert(key); }

    /** Throws for any key that was not read. */
    void finish() const {
        if (!my_table) {
            return;
        }
        for (const auto& [k, v] : *my_table) {
            if (!my_used.count(std::string(k.str()))) {
                throw ConfigError(my_name + "." + std::string(k.str()) + ": unknown key");
            }
        }
    }

    [[noreturn]] void fail(const std::string& key, const std::string& why) const {
        throw ConfigError(my_name + "." + key + ": " + why);
    }

private:
    const toml::node* find(const std::string& key) {
        if (!my_table) {
            return nullptr;
        }
        my_used.insert(key);
        return my_table->get(key);
    }

    template <typename T>
    T require(const toml::node& node, const std::string& key, const char* what) const {
        auto v = node.value_exact<T>();
        if (!v) {
            fail(key, std::string("expected ") + what);
        }
        return *v;
    }

    const toml::table* my_table;
    std::string my_name;
    std::set<std::string> my_used;
};

const toml::table* table_of(const toml::table& root, const std::string& name) {
    const toml::node* node = root.get(name);
    if (!node) {
        return nullptr;
    }
    if (!node->is_table()) {
        throw ConfigError(name + ": expected a [" + name + "] section");
    }
    return node->as_table();
}

}

EvalModelSpec EvalSection::model(Architecture arch, std::size_t head_layers) const {
    EvalModelSpec m;
    m.arch = arch;
    m.head_layers = head_layers;
    m.hidden = hidden;
    m.tokens = tokens;
    m.token_width = token_width;
    return m;
}

void RunConfig::finalize() {
    data.toy.seed = derive_seed(seed, "data");
    autoencoder.seed = derive_seed(seed, "autoencoder");
    scdg.seed = derive_seed(seed, "scdg");
    distill.seed = derive_seed(seed, "distill");
    eval.config.seed = derive_seed(seed, "eval");
    if (grid) {
        grid->seeds.clear();
        for (std::size_t i = 0; i < grid_seeds; ++i) {
            grid->seeds.push_back(derive_seed(seed, "grid." + std::to_string(i)));
        }
    }
    validate();
}

void RunConfig::validate() const {
    if (data.source == "toy") {
        data.toy.validate();
    } else if (data.source == "files") {
        if (data.matrix.empty() || data.labels.empty()) {
            throw ConfigError("data.matrix: source = \"files\" needs both data.matrix and data.labels");
        }
    } else {
        throw ConfigError("data.source: expected \"toy\" or \"files\", got \"" + data.source + "\"");
    }
    if (!(data.train_fraction > 0 && data.train_fraction < 1)) {
        throw ConfigError("data.train_fraction: must lie strictly between 0 and 1");
    }
    if (!(data.min_counts >= 0)) {
        throw ConfigError("data.min_counts: must be non-negative");
    }
    autoencoder.validate();
    scdg.validate();
    distill.validate();
    if (distill.t_gen > scdg.T) {
        throw ConfigError("distill.t_gen: " + std::to_string(distill.t_gen) + " exceeds scdg.T = " + std::to_string(scdg.T));
    }
    eval.config.validate();
    if (eval.archs.empty()) {
        throw ConfigError("eval.archs: need at least one architecture");
    }
    for (const auto& b : eval.baselines) {
        if (b != "full" && b != "random-real" && b != "decoder" && b != "data-dm" && b != "data-dc") {
            throw ConfigError("eval.baselines: unknown method \"" + b + "\"");
        }
    }
    if (eval.hidden == 0 || eval.tokens == 0 || eval.token_width == 0) {
        throw ConfigError("eval.hidden: model widths must be positive");
    }
    if (grid) {
        if (grid->spc.empty() || grid->generators.empty() || grid->frozen.empty() || grid->head_layers.empty()) {
            throw ConfigError("grid.spc: every grid axis needs at least one value");
        }
        if (grid->seeds.empty()) {
            throw ConfigError("grid.seeds: need at least one seed");
        }
        for (auto l : grid->head_layers) {
            if (l == 0) {
                throw ConfigError("grid.head_layers: must be at least 1");
            }
        }
    }
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    toml::table root;
    try {
        root = toml::parse(text, origin);
    } catch (const toml::parse_error& e) {
        const auto& where = e.source().begin;
        throw ConfigError(origin + ":" + std::to_string(where.line) + ":" + std::to_string(where.column) + ": "
                          + std::string(e.description()));
    }
    RunConfig cfg;
    Section top(&root, "config");
    top.get("seed", cfg.seed);
    top.get("out", cfg.out);
    for (const char* s : { "data", "autoencoder", "scdg", "distill", "eval", "grid" }) {
        top.allow(s);
    }

    Section data(table_of(root, "data"), "data");
    data.get("source", cfg.data.source);
    data.get("matrix", cfg.data.matrix);
    data.get("labels", cfg.data.labels);
    data.get("classes", cfg.data.toy.classes);
    data.get("genes", cfg.data.toy.genes);
    data.get("cells", cfg.data.toy.cells);
    data.get("markers_per_class", cfg.data.toy.markers_per_class);
    data.get("imbalance", cfg.data.toy.imbalance);
    data.get("zero_fraction", cfg.data.toy.zero_fraction);
    data.get("library_size", cfg.data.toy.library_size);
    data.get("library_sd", cfg.data.toy.library_sd);
    data.get("marker_fold", cfg.data.toy.marker_fold);
    data.get("programs", cfg.data.toy.programs);
    data.get("program_genes", cfg.data.toy.program_genes);
    data.get("program_fold", cfg.data.toy.program_fold);
    data.get("program_probability", cfg.data.toy.program_probability);
    data.get("gene_weight_sd", cfg.data.toy.gene_weight_sd);
    data.get("min_counts", cfg.data.min_counts);
    data.get("min_cells", cfg.data.min_cells);
    data.get("train_fraction", cfg.data.train_fraction);
    data.finish();

    Section ae(table_of(root, "autoencoder"), "autoencoder");
    ae.get("epochs", cfg.autoencoder.epochs);
    ae.get("batch_size", cfg.autoencoder.batch_size);
    ae.get("lr", cfg.autoencoder.learning_rate);
    ae.finish();

    Section sc(table_of(root, "scdg"), "scdg");
    sc.get("T", cfg.scdg.T);
    sc.get("beta_min", cfg.scdg.beta_min);
    sc.get("beta_max", cfg.scdg.beta_max);
    sc.get("epochs", cfg.scdg.epochs);
    sc.get("batch_size", cfg.scdg.batch_size);
    sc.get("lr", cfg.scdg.learning_rate);
    sc.get("t_gen", cfg.scdg.t_gen);
    sc.finish();
    cfg.distill.t_gen = cfg.scdg.t_gen;

    Section di(table_of(root, "distill"), "distill");
    di.get("K", cfg.distill.K);
    di.get("N", cfg.distill.N);
    di.get("spc", cfg.distill.spc);
    std::string mode = to_string(cfg.distill.mode);
    di.get("mode", mode);
    try {
        cfg.distill.mode = parse_match_mode(mode);
    } catch (const ConfigError&) {
        di.fail("mode", "expected \"dc\", \"dm\" or \"dc+dm\", got \"" + mode + "\"");
    }
    std::string synthesis = to_string(cfg.distill.synthesis);
    di.get("synthesis", synthesis);
    try {
        cfg.distill.synthesis = parse_synthesis(synthesis);
    } catch (const ConfigError&) {
        di.fail("synthesis", "expected \"scdg\", \"decoder\" or \"data\", got \"" + synthesis + "\"");
    }
    di.get("lr_z", cfg.distill.lr_z);
    di.get("lr_theta", cfg.distill.lr_theta);
    di.get("lr_data", cfg.distill.lr_data);
    di.get("momentum", cfg.distill.momentum);
    di.get("t_gen", cfg.distill.t_gen);
    di.get("freeze_foundation", cfg.distill.freeze_foundation);
    di.get("dm_squared", cfg.distill.dm_squared);
    di.get("dm_weight", cfg.distill.dm_weight);
    di.get("dc_weight", cfg.distill.dc_weight);
    di.get("head_layers", cfg.distill.head_layers);
    di.get("expert_batch", cfg.distill.expert_batch);
    di.finish();

    Section ev(table_of(root, "eval"), "eval");
    ev.get("n_trials", cfg.eval.config.n_trials);
    ev.get("epochs", cfg.eval.config.epochs);
    ev.get("lr", cfg.eval.config.lr);
    ev.get("threads", cfg.eval.config.threads);
    ev.get("hidden", cfg.eval.hidden);
    ev.get("tokens", cfg.eval.tokens);
    ev.get("token_width", cfg.eval.token_width);
    std::vector<std::string> archs;
    ev.get_list("archs", archs);
    if (!archs.empty()) {
        cfg.eval.archs.clear();
        for (const auto& a : archs) {
            try {
                cfg.eval.archs.push_back(parse_architecture(a));
            } catch (const ConfigError&) {
                ev.fail("archs", "unknown architecture \"" + a + "\"");
            }
        }
    }
    ev.get_list("baselines", cfg.eval.baselines);
    ev.finish();

    if (const toml::table* g = table_of(root, "grid")) {
        GridSpec grid;
        Section gs(g, "grid");
        gs.get_list("spc", grid.spc);
        std::vector<std::string> gens;
        gs.get_list("generators", gens);
        if (!gens.empty()) {
            grid.generators.clear();
            for (const auto& s : gens) {
                try {
                    grid.generators.push_back(parse_synthesis(s));
                } catch (const ConfigError&) {
                    gs.fail("generators", "unknown generator \"" + s + "\"");
                }
            }
        }
        std::vector<bool> frozen;
        gs.get_list("frozen", frozen);
        if (!frozen.empty()) {
            grid.frozen = frozen;
        }
        gs.get_list("head_layers", grid.head_layers);
        gs.get("seeds", cfg.grid_seeds);
        gs.finish();
        cfg.grid = grid;
    }
    top.finish();
    cfg.finalize();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError(path + ": cannot open config file");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path);
}

}
