#include <gtest/gtest.h>

#include "scdd/data.hpp"
#include "scdd/error.hpp"
#include "scdd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace scdd;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("scdd_test_data_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

// Independent normalization oracle working on a dense row.
std::vector<double> normalize_row(const std::vector<double>& counts, double target) {
    double total = 0;
    for (double v : counts) {
        total += v;
    }
    std::vector<double> out;
    for (double v : counts) {
        out.push_back(std::log(1.0 + v * target / total));
    }
    return out;
}

ToyConfig small_toy() {
    ToyConfig cfg;
    cfg.classes = 4;
    cfg.genes = 400;
    cfg.cells = 600;
    cfg.markers_per_class = 10;
    cfg.imbalance = 5;
    cfg.program_genes = 20;
    return cfg;
}

}

TEST(MatrixMarket, LoadsSmallDataset) {
    auto dir = temp_dir("load");
    write_text(dir / "m.mtx", "%%MatrixMarket matrix coordinate real general\n% comment\n2 3 2\n1 1 1.0\n2 3 3.0\n");
    write_text(dir / "l.csv", "cell_id,class_id\na,0\nb,1\n");
    auto ds = load_dataset((dir / "m.mtx").string(), (dir / "l.csv").string());
    EXPECT_EQ(ds.matrix.n_cells(), 2u);
    EXPECT_EQ(ds.matrix.n_genes(), 3u);
    EXPECT_EQ(ds.class_count, 2u);
    auto dense = ds.matrix.to_dense();
    EXPECT_EQ(dense(0, 0), 1.0);
    EXPECT_EQ(dense(1, 2), 3.0);
    EXPECT_EQ(dense(0, 2), 0.0);
}

TEST(MatrixMarket, EmptyEntryListIsAllZero) {
    auto dir = temp_dir("empty");
    write_text(dir / "m.mtx", "%%MatrixMarket matrix coordinate real general\n2 3 0\n");
    write_text(dir / "l.csv", "cell_id,class_id\na,0\nb,0\n");
    auto ds = load_dataset((dir / "m.mtx").string(), (dir / "l.csv").string());
    EXPECT_EQ(ds.matrix.nnz(), 0u);
    EXPECT_EQ(ds.matrix.zero_fraction(), 1.0);
}

TEST(MatrixMarket, LabelCountMismatchFails) {
    auto dir = temp_dir("mismatch");
    write_text(dir / "m.mtx", "%%MatrixMarket matrix coordinate real general\n2 3 1\n1 1 1\n");
    write_text(dir / "l.csv", "cell_id,class_id\na,0\n");
    EXPECT_THROW(load_dataset((dir / "m.mtx").string(), (dir / "l.csv").string()), ParseError);
}

TEST(MatrixMarket, ErrorsCarryLineNumbers) {
    auto dir = temp_dir("errors");
    auto expect_line = [&](const std::string& body, const std::string& fragment) {
        write_text(dir / "m.mtx", "%%MatrixMarket matrix coordinate real general\n" + body);
        try {
            read_matrix_market((dir / "m.mtx").string());
            FAIL() << "no error for " << body;
        } catch (const ParseError& e) {
            EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
        }
    };
    expect_line("2 3 1\n1 1 -1\n", ":3:");
    expect_line("2 3 2\n1 1 1\n3 1 1\n", ":4:");
    expect_line("2 3 1\n1 x 1\n", ":3:");
    expect_line("2 3 2\n1 1 1\n1 1 2\n", "duplicate");
}

TEST(MatrixMarket, RoundTripIsExact) {
    auto dir = temp_dir("roundtrip");
    auto ds = normalize_dataset(filter_dataset(make_toy_dataset(small_toy())));
    save_dataset((dir / "m.mtx").string(), (dir / "l.csv").string(), ds);
    auto back = load_dataset((dir / "m.mtx").string(), (dir / "l.csv").string());
    EXPECT_TRUE(back == ds);
}

TEST(Normalize, Examples) {
    auto m = ExpressionMatrix::from_dense(Tensor::matrix(3, 3, { 1, 0, 3, 1e4, 0, 0, 5, 5, 0 }));
    auto d = normalize_cells(m, 1e4).to_dense();
    EXPECT_NEAR(d(0, 0), std::log(2501.0), 1e-12);
    EXPECT_EQ(d(0, 1), 0.0);
    EXPECT_NEAR(d(0, 2), std::log(7501.0), 1e-12);
    EXPECT_NEAR(d(1, 0), std::log(10001.0), 1e-12);
    EXPECT_NEAR(d(2, 0), std::log(5001.0), 1e-12);
    EXPECT_EQ(d(2, 0), d(2, 1));
}

TEST(Normalize, MatchesOracleAndPreservesTotals) {
    auto ds = make_toy_dataset(small_toy());
    auto filtered = filter_dataset(ds);
    auto norm = normalize_cells(filtered.matrix);
    EXPECT_TRUE(norm.same_pattern(filtered.matrix));
    auto raw_dense = filtered.matrix.to_dense();
    auto norm_dense = norm.to_dense();
    for (std::size_t c = 0; c < norm.n_cells(); ++c) {
        double total = 0;
        for (double v : norm.cell_values(c)) {
            total += std::expm1(v);
        }
        ASSERT_NEAR(total / 1e4, 1.0, 1e-9) << "cell " << c;
        if (c < 20) {
            auto row = raw_dense.row(c);
            auto expect = normalize_row(std::vector<double>(row.begin(), row.end()), 1e4);
            for (std::size_t g = 0; g < expect.size(); ++g) {
                ASSERT_NEAR(norm_dense(c, g), expect[g], 1e-12);
            }
        }
    }
}

TEST(Normalize, ZeroCellFails) {
    auto m = ExpressionMatrix::from_dense(Tensor::matrix(2, 2, { 1, 0, 0, 0 }));
    EXPECT_THROW(normalize_cells(m), DataError);
}

TEST(Split, SevenThreePerClass) {
    LabeledDataset ds;
    ds.class_count = 3;
    for (std::size_t i = 0; i < 30; ++i) {
        ds.labels.push_back(i % 3);
        ds.conditions.push_back({ i % 3, {} });
        ds.cell_ids.push_back("c" + std::to_string(i));
    }
    ds.matrix = ExpressionMatrix(30, 5);
    auto [train, test] = split_dataset(ds, 0.7, 4);
    for (const auto& part : class_partition(train)) {
        EXPECT_EQ(part.size(), 7u);
    }
    for (const auto& part : class_partition(test)) {
        EXPECT_EQ(part.size(), 3u);
    }
    EXPECT_TRUE(std::is_sorted(train.cell_ids.begin(), train.cell_ids.end(), [](const auto& a, const auto& b) {
        return std::stoi(a.substr(1)) < std::stoi(b.substr(1));
    }));

    auto [train2, test2] = split_dataset(ds, 0.7, 4);
    EXPECT_EQ(train.cell_ids, train2.cell_ids);
    EXPECT_EQ(test.cell_ids, test2.cell_ids);
}

TEST(Split, HalfOfTwo) {
    LabeledDataset ds;
    ds.class_count = 2;
    ds.labels = { 0, 0, 1, 1 };
    for (std::size_t i = 0; i < 4; ++i) {
        ds.conditions.push_back({ ds.labels[i], {} });
        ds.cell_ids.push_back("c" + std::to_string(i));
    }
    ds.matrix = ExpressionMatrix(4, 2);
    auto [train, test] = split_dataset(ds, 0.5, 0);
    EXPECT_EQ(train.size(), 2u);
    EXPECT_EQ(test.size(), 2u);
    EXPECT_EQ(class_partition(train)[0].size(), 1u);
    EXPECT_EQ(class_partition(test)[1].size(), 1u);
}

TEST(Split, SingletonClassFails) {
    LabeledDataset ds;
    ds.class_count = 2;
    ds.labels = { 0, 0, 1 };
    for (std::size_t i = 0; i < 3; ++i) {
        ds.conditions.push_back({ ds.labels[i], {} });
        ds.cell_ids.push_back("c" + std::to_string(i));
    }
    ds.matrix = ExpressionMatrix(3, 2);
    EXPECT_THROW(split_dataset(ds, 0.7, 0), DataError);
}

TEST(Toy, DefaultZeroFractionAndImbalance) {
    ToyConfig cfg;
    auto ds = make_toy_dataset(cfg);
    ds.validate();
    EXPECT_EQ(ds.matrix.n_cells(), 5000u);
    EXPECT_EQ(ds.matrix.n_genes(), 2000u);
    // Count zeros directly from the dense form.
    auto dense = ds.matrix.to_dense();
    std::size_t zeros = 0;
    for (double v : dense.data()) {
        zeros += v == 0 ? 1 : 0;
    }
    const double zf = static_cast<double>(zeros) / static_cast<double>(dense.size());
    EXPECT_GE(zf, 0.88);
    EXPECT_LE(zf, 0.92);

    auto parts = class_partition(ds);
    std::size_t largest = 0, smallest = ds.size();
    for (const auto& p : parts) {
        largest = std::max(largest, p.size());
        smallest = std::min(smallest, p.size());
    }
    const double ratio = static_cast<double>(largest) / static_cast<double>(smallest);
    EXPECT_NEAR(ratio / cfg.imbalance, 1.0, 0.1);
}

TEST(Toy, BalancedWhenRatioIsOne) {
    ToyConfig cfg = small_toy();
    cfg.imbalance = 1;
    cfg.cells = 603;
    auto sizes = toy_class_sizes(cfg);
    auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    EXPECT_LE(*hi - *lo, 1u);
}

TEST(Toy, Deterministic) {
    auto a = make_toy_dataset(small_toy());
    auto b = make_toy_dataset(small_toy());
    EXPECT_TRUE(a == b);
    ToyConfig other = small_toy();
    other.seed = 1;
    EXPECT_FALSE(make_toy_dataset(other) == a);
}

TEST(Toy, InfeasibleSparsityFails) {
    ToyConfig cfg = small_toy();
    cfg.library_size = 50;
    cfg.zero_fraction = 0.5;
    EXPECT_THROW(make_toy_dataset(cfg), DataError);
}

TEST(Toy, InvalidConfigFails) {
    ToyConfig cfg = small_toy();
    cfg.classes = 1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_toy();
    cfg.genes = 50;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_toy();
    cfg.imbalance = 0.5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_toy();
    cfg.zero_fraction = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Filter, DropsSparseCellsAndGenes) {
    // Cell 2 has 4 counts; gene 2 is seen in only one cell.
    auto m = ExpressionMatrix::from_dense(Tensor::matrix(4, 3, { 5, 6, 0, 5, 6, 0, 2, 2, 0, 5, 6, 9 }));
    LabeledDataset ds;
    ds.matrix = m;
    ds.class_count = 1;
    ds.labels.assign(4, 0);
    ds.conditions.assign(4, { 0, {} });
    ds.cell_ids = { "a", "b", "c", "d" };
    auto out = filter_dataset(ds, 10, 3);
    EXPECT_EQ(out.cell_ids, (std::vector<std::string>{ "a", "b", "d" }));
    EXPECT_EQ(out.matrix.n_genes(), 2u);
}

TEST(ClassPartition, Examples) {
    std::vector<std::size_t> labels{ 0, 1, 0 };
    auto parts = class_partition(labels, 2);
    EXPECT_EQ(parts[0], (std::vector<std::size_t>{ 0, 2 }));
    EXPECT_EQ(parts[1], (std::vector<std::size_t>{ 1 }));

    std::vector<std::size_t> single(5, 0);
    EXPECT_EQ(class_partition(single, 1)[0], (std::vector<std::size_t>{ 0, 1, 2, 3, 4 }));
}

TEST(ClassPartition, PermutationKeepsSizes) {
    Rng rng(9);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 200; ++i) {
        labels.push_back(rng.uniform_index(6));
    }
    auto sizes = [](const std::vector<std::vector<std::size_t>>& parts) {
        std::vector<std::size_t> s;
        for (const auto& p : parts) {
            s.push_back(p.size());
        }
        std::sort(s.begin(), s.end());
        return s;
    };
    auto before = sizes(class_partition(labels, 6));
    rng.shuffle(labels);
    EXPECT_EQ(sizes(class_partition(labels, 6)), before);
}

TEST(ExpressionMatrix, RejectsInvalidEntries) {
    EXPECT_THROW(ExpressionMatrix::from_entries(2, 2, { { 0, 0, -1 } }), DataError);
    EXPECT_THROW(ExpressionMatrix::from_entries(2, 2, { { 2, 0, 1 } }), DataError);
    EXPECT_THROW(ExpressionMatrix::from_entries(2, 2, { { 0, 0, 1 }, { 0, 0, 2 } }), DataError);
}
