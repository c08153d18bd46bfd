#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "test_support.hpp"
#include "unlearn/datasets.hpp"
#include "unlearn/models.hpp"
#include "unlearn/training.hpp"

using namespace unlearn;

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "unlearn_test_datasets";
    std::filesystem::create_directories(dir);
    return dir;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc);
    out << text;
}

void write_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels,
                    int n, int rows, int cols, unsigned char fill, unsigned char first_label,
                    bool corrupt_magic = false, int label_count_delta = 0) {
    auto be32 = [](std::ofstream& out, std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<char*>(b), 4);
    };
    {
        std::ofstream out(images, std::ios::binary | std::ios::trunc);
        be32(out, corrupt_magic ? 0x00000404u : 0x00000803u);
        be32(out, static_cast<std::uint32_t>(n));
        be32(out, static_cast<std::uint32_t>(rows));
        be32(out, static_cast<std::uint32_t>(cols));
        std::vector<unsigned char> pix(static_cast<std::size_t>(n * rows * cols), fill);
        if (!pix.empty()) pix[0] = 255;  // pixel scaling probe
        out.write(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
    }
    {
        std::ofstream out(labels, std::ios::binary | std::ios::trunc);
        be32(out, 0x00000801u);
        be32(out, static_cast<std::uint32_t>(n + label_count_delta));
        std::vector<unsigned char> lab(static_cast<std::size_t>(n + label_count_delta), 1);
        if (!lab.empty()) lab[0] = first_label;
        out.write(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
    }
}

}  // namespace

TEST_CASE("gen_blobs balance and determinism") {
    auto tiny = datasets::gen_blobs(4, 2, 2, 0.5, 7);
    int per_class[2] = {0, 0};
    for (int label : tiny.labels) ++per_class[label];
    CHECK(per_class[0] == 2);
    CHECK(per_class[1] == 2);

    auto a = datasets::gen_blobs(50, 3, 3, 1.0, 9);
    auto b = datasets::gen_blobs(50, 3, 3, 1.0, 9);
    CHECK(a.features == b.features);
    CHECK(a.labels == b.labels);

    auto c = datasets::gen_blobs(50, 3, 3, 1.0, 10);
    CHECK(a.features != c.features);
}

TEST_CASE("gen_blobs separability: a trained logistic model fits tight blobs") {
    auto ds = datasets::gen_blobs(120, 2, 3, 0.1, 13);
    models::ModelSpec spec;
    spec.kind = models::ModelKind::logistic;
    spec.input_dim = 2;
    spec.classes = 3;
    spec.l2 = 1e-3;
    training::TrainConfig tc;
    tc.lr = 0.5;
    tc.max_epochs = 40;
    tc.patience = 0;
    tc.val_fraction = 0.0;
    tc.seed = 5;
    auto [ckpt, history] = training::train(spec, ds, tc);
    CHECK(models::accuracy(spec, ckpt.params, ds) >= 0.95);
}

TEST_CASE("csv loader") {
    const auto dir = temp_dir();

    SUBCASE("dense label remap preserves first-appearance order") {
        const auto p = dir / "remap.csv";
        write_text(p, "a,b,label\n1,2,5\n3,4,7\n5,6,5\n");
        auto ds = datasets::load_csv(p, "label");
        CHECK(ds.size() == 3);
        CHECK(ds.dim() == 2);
        CHECK(ds.labels == std::vector<int>{0, 1, 0});
        CHECK(ds.classes == 2);
        CHECK(ds.features(2, 1) == 6.0);
    }

    SUBCASE("header-only file raises EmptyDataset") {
        const auto p = dir / "empty.csv";
        write_text(p, "a,b,label\n");
        try {
            datasets::load_csv(p, "label");
            FAIL("expected EmptyDataset");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::empty_dataset);
        }
    }

    SUBCASE("ragged row names the line") {
        const auto p = dir / "ragged.csv";
        write_text(p, "a,b,label\n1,2,0\n3,4\n");
        try {
            datasets::load_csv(p, "label");
            FAIL("expected ParseError");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::parse_error);
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }

    SUBCASE("non-numeric cell names line and column") {
        const auto p = dir / "alpha.csv";
        write_text(p, "a,b,label\n1,x,0\n2,3,1\n");
        try {
            datasets::load_csv(p, "label");
            FAIL("expected ParseError");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::parse_error);
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
            CHECK(std::string(e.what()).find("column 2") != std::string::npos);
        }
    }

    SUBCASE("non-finite cells are rejected") {
        const auto p = dir / "inf.csv";
        write_text(p, "a,b,label\n1,inf,0\n2,3,1\n");
        CHECK_THROWS_AS(datasets::load_csv(p, "label"), Error);
    }

    SUBCASE("export/import round-trip is identical") {
        auto ds = datasets::gen_blobs(25, 4, 3, 1.3, 17);
        const auto p = dir / "roundtrip.csv";
        datasets::save_csv(ds, p);
        auto loaded = datasets::load_csv(p, "label");
        CHECK(loaded.size() == ds.size());
        CHECK(loaded.labels == ds.labels);
        CHECK(loaded.features == ds.features);
    }
}

TEST_CASE("idx loader") {
    const auto dir = temp_dir();
    const auto img = dir / "images.idx";
    const auto lab = dir / "labels.idx";

    SUBCASE("shape, scaling and label bytes") {
        write_idx_pair(img, lab, 3, 2, 2, 128, 7);
        auto ds = datasets::load_idx(img, lab);
        CHECK(ds.size() == 3);
        CHECK(ds.dim() == 4);
        CHECK(ds.features(0, 0) == 1.0);  // pixel 255
        CHECK(ds.features(0, 1) == doctest::Approx(128.0 / 255.0));
        CHECK(ds.labels[0] == 7);
        CHECK(ds.classes == 8);
    }

    SUBCASE("bad magic raises ParseError") {
        write_idx_pair(img, lab, 2, 2, 2, 10, 1, /*corrupt_magic=*/true);
        try {
            datasets::load_idx(img, lab);
            FAIL("expected ParseError");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::parse_error);
        }
    }

    SUBCASE("count mismatch raises CountMismatch") {
        write_idx_pair(img, lab, 2, 2, 2, 10, 1, false, /*label_count_delta=*/1);
        try {
            datasets::load_idx(img, lab);
            FAIL("expected CountMismatch");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::count_mismatch);
        }
    }
}

TEST_CASE("split is deterministic and respects fractions") {
    auto ds = datasets::gen_blobs(200, 3, 2, 1.0, 23);
    datasets::SplitFractions fractions{0.6, 0.2, 0.2};
    auto s1 = datasets::split(ds, fractions, 31);
    auto s2 = datasets::split(ds, fractions, 31);
    CHECK(s1.train.features == s2.train.features);
    CHECK(s1.val.features == s2.val.features);
    CHECK(s1.test.features == s2.test.features);
    CHECK(s1.train.size() == 120);
    CHECK(s1.val.size() == 40);
    CHECK(s1.test.size() == 40);

    datasets::SplitFractions bad{0.5, 0.2, 0.2};
    try {
        datasets::split(ds, bad, 31);
        FAIL("expected BadRatio");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::bad_ratio);
    }
}

TEST_CASE("make_partition sizes, determinism and errors") {
    auto p = datasets::make_partition(1000, 0.05, 41);
    CHECK(p.forget_indices.size() == 50);
    CHECK(p.remain_indices.size() == 950);

    auto q = datasets::make_partition(1000, 0.05, 41);
    CHECK(p.forget_indices == q.forget_indices);

    // Half-away-from-zero rounding and the minimum-one rule.
    CHECK(datasets::make_partition(100, 0.005, 1).forget_indices.size() == 1);  // 0.5 → 1
    CHECK(datasets::make_partition(100, 0.001, 1).forget_indices.size() == 1);  // floor 0 → 1
    CHECK(datasets::make_partition(100, 0.025, 1).forget_indices.size() == 3);  // 2.5 → 3

    const int explicit_forget[] = {0};
    auto e = datasets::make_partition(10, explicit_forget);
    CHECK(e.forget_indices == std::vector<int>{0});
    CHECK(e.remain_indices.size() == 9);

    try {
        datasets::make_partition(100, 1.5, 1);
        FAIL("expected BadRatio");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::bad_ratio);
    }
    CHECK_THROWS_AS(datasets::make_partition(100, 0.0, 1), Error);
}

TEST_CASE("partition is an exact two-set cover") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const int n = 37 + static_cast<int>(seed) * 13;
        auto p = datasets::make_partition(n, 0.1 + 0.05 * static_cast<double>(seed % 5), seed);
        std::vector<bool> seen(static_cast<std::size_t>(n), false);
        for (int i : p.forget_indices) {
            CHECK_FALSE(seen[static_cast<std::size_t>(i)]);
            seen[static_cast<std::size_t>(i)] = true;
        }
        for (int i : p.remain_indices) {
            CHECK_FALSE(seen[static_cast<std::size_t>(i)]);
            seen[static_cast<std::size_t>(i)] = true;
        }
        CHECK(std::count(seen.begin(), seen.end(), false) == 0);
        CHECK(std::is_sorted(p.forget_indices.begin(), p.forget_indices.end()));
        CHECK(std::is_sorted(p.remain_indices.begin(), p.remain_indices.end()));
    }
}
