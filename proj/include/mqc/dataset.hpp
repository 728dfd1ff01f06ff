#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mqc/augment.hpp"
#include "mqc/kspace.hpp"
#include "mqc/labels.hpp"

namespace mqc {

namespace csv {
std::vector<std::string> split_line(const std::string& line);
std::string quote(const std::string& field);
std::string join(const std::vector<std::string>& fields);
}  // namespace csv

enum class Split { Train, Val, Test, Unassigned };
enum class Pool { Synthetic, Qc, Unassigned };

std::string to_string(Split s);
std::string to_string(Pool p);
Split split_from_string(const std::string& s);
Pool pool_from_string(const std::string& s);

struct ManifestEntry {
  std::string subject_id;
  std::string site_id;
  std::string path;
  std::optional<int> qc_score;  // 1..4
  std::string qc_comment;
  Split split = Split::Unassigned;
  Pool pool = Pool::Unassigned;
};

using Manifest = std::vector<ManifestEntry>;

/// CSV with header subject_id,site_id,path,qc_score,qc_comment,split,pool.
Manifest read_manifest(const std::string& path);
void write_manifest(const Manifest& m, const std::string& path);

/// Keep QC score 4 entries whose comment has no motion-related keyword.
Manifest filter_for_synthesis(
    const Manifest& m,
    const std::vector<std::string>& keywords = {"motion", "movement",
                                               "ringing"});

/// Assign pools by site; the two site sets must be disjoint.
void split_by_site(Manifest& m, const std::vector<std::string>& synth_sites,
                   const std::vector<std::string>& qc_sites);

/// Assign train/val/test at subject granularity; deterministic given seed.
void split_subjects(Manifest& m, double train_frac, double val_frac,
                    double test_frac, std::uint64_t seed);

/// QC 4-point scale merged to 3 classes: {1,2}->0, {3}->1, {4}->2.
int merge_qc_classes(int qc_score);

/// Leakage audit; returns human-readable violations (empty = clean).
std::vector<std::string> audit_manifest(const Manifest& m);

struct GenerationReport {
  int total_jobs = 0;
  int generated = 0;
  int skipped_resume = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;
  std::vector<int> per_split_counts = std::vector<int>(4, 0);
  std::vector<int> score_histogram;  // over BinSpec bins
  std::string labels_manifest_path;

  std::string to_json() const;
};

struct GenerationOptions {
  AugmentConfig augment;
  MotionParams motion;
  RmsConfig rms;
  BinSpec bins;
  int passes = 300;
  std::uint64_t master_seed = 0;
  int workers = 1;
  double max_failure_fraction = 0.1;
  std::string out_dir;
};

/// Seed for one (volume, pass) job; independent of scheduling order.
std::uint64_t derive_job_seed(std::uint64_t master_seed,
                              const std::string& volume_id, int pass_index);

/// Generate passes x |entries| corrupted volumes plus JSON sidecars and a
/// labels manifest. Existing outputs with matching sidecar seeds are skipped.
GenerationReport run_generation(const Manifest& entries,
                                const GenerationOptions& opts);

}  // namespace mqc
