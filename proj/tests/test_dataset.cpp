#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "cine/dataset.hpp"
#include "cine/nifti.hpp"
#include "cine/sequence_io.hpp"

using namespace cine;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cinerecon_test_dataset_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

NiftiVolume cine_volume(int h, int w, int slices, int frames, double scale) {
  NiftiVolume v;
  v.dims = {h, w, slices, frames};
  v.spacing = {1.5, 1.25, 8.0, 1.0};
  for (int t = 0; t < frames; ++t)
    for (int z = 0; z < slices; ++z)
      for (int y = 0; y < w; ++y)
        for (int x = 0; x < h; ++x) v.data.push_back(scale * (1 + x + 2 * y + 3 * z + 5 * t));
  return v;
}

}  // namespace

TEST_CASE("nifti write/read round trip, gz and plain") {
  const fs::path dir = scratch("nifti");
  const NiftiVolume v = cine_volume(6, 5, 2, 3, 0.5);
  for (const char* name : {"a.nii", "b.nii.gz"}) {
    write_nifti(dir / name, v);
    const NiftiVolume r = read_nifti(dir / name);
    CHECK(r.dims == v.dims);
    CHECK(r.spacing[0] == doctest::Approx(1.5));
    REQUIRE(r.data.size() == v.data.size());
    for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == static_cast<double>(static_cast<float>(v.data[i])));
    CHECK(r.at(2, 3, 1, 2) == doctest::Approx(0.5 * (1 + 2 + 6 + 3 + 10)));
  }
}

TEST_CASE("corrupt nifti is rejected") {
  const fs::path dir = scratch("corrupt");
  std::ofstream(dir / "bad.nii") << "definitely not a nifti header";
  CHECK_THROWS(read_nifti(dir / "bad.nii"));
}

TEST_CASE("subject with several slices yields one sequence per slice") {
  const fs::path dir = scratch("slices");
  for (const char* s : {"patient001", "patient002", "patient003"}) {
    fs::create_directories(dir / s);
    write_nifti(dir / s / (std::string(s) + "_4d.nii.gz"), cine_volume(16, 18, 4, 5, 1.0));
  }
  const IngestedDataset ds = ingest_dataset(dir, SplitSpec{});
  REQUIRE(ds.sequences.size() == 12);
  for (const auto& q : ds.sequences) {
    CHECK(q.num_frames() == 5);
    CHECK(q.height() == 16);
    CHECK(q.width() == 18);
    CHECK(q.max_magnitude() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("split assignment is subject-disjoint, non-empty and seeded") {
  const fs::path dir = scratch("mini");
  write_synthetic_root(dir, 3, 2, 4, 24, 24, 1);
  fs::create_directories(dir / "junk");
  std::ofstream(dir / "junk" / "junk_4d.nii") << "garbage";
  const IngestedDataset ds = ingest_dataset(dir, SplitSpec{100, 20, 30, 9});
  CHECK(ds.warnings.size() == 1);
  CHECK(ds.subjects.size() == 3);
  std::set<Split> seen;
  for (const auto& [subject, split] : ds.subjects) seen.insert(split);
  CHECK(seen.size() == 3);
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) CHECK(ds.splits[i] == ds.subjects.at(ds.sequences[i].subject_id));
  CHECK(ingest_dataset(dir, SplitSpec{100, 20, 30, 9}).subjects == ds.subjects);
}

TEST_CASE("100/20/30 weights on 150 subjects give 100/20/30") {
  std::vector<std::string> ids;
  for (int i = 0; i < 150; ++i) ids.push_back("patient" + std::to_string(1000 + i));
  const auto splits = assign_splits(ids, SplitSpec{});
  int counts[3] = {0, 0, 0};
  for (const auto& [id, s] : splits) ++counts[static_cast<int>(s)];
  CHECK(counts[static_cast<int>(Split::train)] == 100);
  CHECK(counts[static_cast<int>(Split::val)] == 20);
  CHECK(counts[static_cast<int>(Split::test)] == 30);
  CHECK_THROWS_AS(assign_splits({"a", "b"}, SplitSpec{}), std::invalid_argument);
}

TEST_CASE("empty root is rejected") {
  CHECK_THROWS_AS(ingest_dataset(scratch("empty"), SplitSpec{}), std::invalid_argument);
  CHECK_THROWS_AS(ingest_dataset("/nonexistent/cinerecon", SplitSpec{}), std::invalid_argument);
}

TEST_CASE("sequence files round trip bit-exactly; trailing bytes and bad magic rejected") {
  const fs::path dir = scratch("seqio");
  MaskSpec spec;
  spec.acceleration = 4;
  spec.mask_seed = 3;
  spec.noise_sigma = 0.01;
  spec.per_frame = true;
  const SequenceRecord rec = make_record(synthetic_sequence(32, 24, 4, 2), Split::val, 77, spec);
  write_sequence(dir / "a.cseq", rec);
  const SequenceRecord back = read_sequence(dir / "a.cseq");
  CHECK(back.id() == rec.id());
  CHECK(back.split == Split::val);
  CHECK(back.phase_seed == 77);
  CHECK(back.mask == rec.mask);
  CHECK(back.frame_masks == rec.frame_masks);
  CHECK(back.noise.sigma == rec.noise.sigma);
  CHECK(back.noise.seed == rec.noise.seed);
  for (int t = 0; t < 4; ++t) CHECK(back.sequence.frames[static_cast<std::size_t>(t)] == rec.sequence.frames[static_cast<std::size_t>(t)]);
  CHECK(back.measure().frames[2] == rec.measure().frames[2]);

  fs::copy_file(dir / "a.cseq", dir / "b.cseq");
  std::ofstream(dir / "b.cseq", std::ios::app | std::ios::binary) << "x";
  CHECK_THROWS(read_sequence(dir / "b.cseq"));
  std::ofstream(dir / "c.cseq", std::ios::binary) << "NOTASEQ!";
  CHECK_THROWS(read_sequence(dir / "c.cseq"));
}

TEST_CASE("remask redraws per sequence and keeps the frames") {
  const SequenceRecord rec = make_record(synthetic_sequence(32, 32, 3, 4), Split::train, 1, MaskSpec{4.0, 0, 5, 0.0, false});
  const SequenceRecord r8 = remask(rec, MaskSpec{8.0, 0, 5, 0.0, false});
  CHECK(rec.mask.sampled_count() == 8);
  CHECK(r8.mask.sampled_count() == 4);
  CHECK(r8.sequence.frames[1] == rec.sequence.frames[1]);
  CHECK(remask(rec, MaskSpec{4.0, 0, 5, 0.0, false}).mask == rec.mask);
}

TEST_CASE("manifest round trip and split loading") {
  const fs::path dir = scratch("manifest");
  Manifest m;
  m.acceleration = 8;
  m.split_seed = 4;
  m.mask_seed = 6;
  const SequenceRecord rec = make_record(synthetic_sequence(16, 16, 2, 1), Split::test, 1, MaskSpec{});
  fs::create_directories(dir / "seq");
  write_sequence(dir / "seq" / "t.cseq", rec);
  m.test = {"seq/t.cseq"};
  write_manifest(dir / "manifest.json", m);
  const Manifest r = read_manifest(dir / "manifest.json");
  CHECK(r.acceleration == 8);
  CHECK(r.test == m.test);
  CHECK(r.train.empty());
  const auto loaded = load_split(dir / "manifest.json", Split::test);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].id() == rec.id());
}

TEST_CASE("synthetic cine moves and is normalised") {
  const RealSequence s = synthetic_cine(48, 48, 6, 3);
  REQUIRE(s.size() == 6);
  CHECK((s[0] - s[3]).norm() > 1e-3);
  double peak = 0;
  for (const auto& f : s) peak = std::max(peak, f.maxCoeff());
  CHECK(peak <= 1.0 + 1e-12);
  CHECK_THROWS(synthetic_cine(8, 48, 6, 3));
}
