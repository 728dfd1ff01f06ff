#include "mqc/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "mqc/rng.hpp"

namespace fs = std::filesystem;

namespace mqc {

namespace csv {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string join(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += quote(fields[i]);
  }
  return out;
}

}  // namespace csv

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    default: return "unassigned";
  }
}

std::string to_string(Pool p) {
  switch (p) {
    case Pool::Synthetic: return "synthetic";
    case Pool::Qc: return "qc";
    default: return "unassigned";
  }
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "unassigned" || s.empty()) return Split::Unassigned;
  throw ArgumentError("unknown split: " + s);
}

Pool pool_from_string(const std::string& s) {
  if (s == "synthetic") return Pool::Synthetic;
  if (s == "qc") return Pool::Qc;
  if (s == "unassigned" || s.empty()) return Pool::Unassigned;
  throw ArgumentError("unknown pool: " + s);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("manifest is empty: " + path);
  const auto header = csv::split_line(line);
  const std::vector<std::string> expected = {
      "subject_id", "site_id", "path", "qc_score", "qc_comment", "split",
      "pool"};
  if (header != expected)
    throw FormatError("manifest header mismatch in " + path);

  Manifest m;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = csv::split_line(line);
    if (f.size() != 7)
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": expected 7 fields");
    ManifestEntry e;
    e.subject_id = f[0];
    e.site_id = f[1];
    e.path = f[2];
    if (!f[3].empty()) {
      const int q = std::stoi(f[3]);
      if (q < 1 || q > 4)
        throw FormatError(path + ":" + std::to_string(lineno) +
                          ": qc_score out of 1..4");
      e.qc_score = q;
    }
    e.qc_comment = f[4];
    e.split = split_from_string(f[5]);
    e.pool = pool_from_string(f[6]);
    if (e.subject_id.empty() || e.site_id.empty())
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": empty subject_id or site_id");
    m.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << "subject_id,site_id,path,qc_score,qc_comment,split,pool\n";
  for (const auto& e : m) {
    out << csv::join({e.subject_id, e.site_id, e.path,
                      e.qc_score ? std::to_string(*e.qc_score) : "",
                      e.qc_comment, to_string(e.split), to_string(e.pool)})
        << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

namespace {
std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}
}  // namespace

Manifest filter_for_synthesis(const Manifest& m,
                              const std::vector<std::string>& keywords) {
  std::vector<std::string> kw;
  kw.reserve(keywords.size());
  for (const auto& k : keywords) kw.push_back(lower(k));

  Manifest out;
  for (const auto& e : m) {
    if (!e.qc_score || *e.qc_score != 4) continue;
    const std::string comment = lower(e.qc_comment);
    const bool flagged = std::any_of(kw.begin(), kw.end(), [&](const auto& k) {
      return !k.empty() && comment.find(k) != std::string::npos;
    });
    if (!flagged) out.push_back(e);
  }
  return out;
}

void split_by_site(Manifest& m, const std::vector<std::string>& synth_sites,
                   const std::vector<std::string>& qc_sites) {
  const std::set<std::string> synth(synth_sites.begin(), synth_sites.end());
  const std::set<std::string> qc(qc_sites.begin(), qc_sites.end());
  for (const auto& s : synth)
    if (qc.count(s))
      throw ArgumentError("split_by_site: site in both pools: " + s);
  for (auto& e : m) {
    if (synth.count(e.site_id))
      e.pool = Pool::Synthetic;
    else if (qc.count(e.site_id))
      e.pool = Pool::Qc;
  }
}

void split_subjects(Manifest& m, double train_frac, double val_frac,
                    double test_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && val_frac > 0.0 && test_frac > 0.0))
    throw ArgumentError("split_subjects: fractions must be positive");
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
    throw ArgumentError("split_subjects: fractions must sum to 1");

  std::set<std::string> subject_set;
  for (const auto& e : m) subject_set.insert(e.subject_id);
  std::vector<std::string> subjects(subject_set.begin(), subject_set.end());

  // Fisher-Yates with the project RNG so the assignment is stable across
  // standard libraries.
  Rng rng(seed);
  for (std::size_t i = subjects.size(); i > 1; --i)
    std::swap(subjects[i - 1], subjects[rng.uniform_int(0, i - 1)]);

  const auto n = subjects.size();
  const auto n_train = static_cast<std::size_t>(std::round(train_frac * n));
  const auto n_val = static_cast<std::size_t>(std::round(val_frac * n));
  std::map<std::string, Split> assign;
  for (std::size_t i = 0; i < n; ++i) {
    Split s = Split::Test;
    if (i < n_train)
      s = Split::Train;
    else if (i < n_train + n_val)
      s = Split::Val;
    assign[subjects[i]] = s;
  }
  for (auto& e : m) e.split = assign.at(e.subject_id);
}

int merge_qc_classes(int qc_score) {
  switch (qc_score) {
    case 1:
    case 2: return 0;
    case 3: return 1;
    case 4: return 2;
    default:
      throw ArgumentError("merge_qc_classes: score out of 1..4");
  }
}

std::vector<std::string> audit_manifest(const Manifest& m) {
  std::vector<std::string> violations;
  std::map<std::string, std::set<Split>> subject_splits;
  std::map<std::string, std::set<Pool>> site_pools;
  std::size_t split_unassigned = 0, split_assigned = 0;
  for (const auto& e : m) {
    if (e.split != Split::Unassigned) {
      subject_splits[e.subject_id].insert(e.split);
      ++split_assigned;
    } else {
      ++split_unassigned;
    }
    if (e.pool != Pool::Unassigned) site_pools[e.site_id].insert(e.pool);
  }
  // an all-unassigned column just means that stage has not run yet; a mix
  // means rows escaped the assignment
  if (split_assigned > 0 && split_unassigned > 0)
    violations.push_back(std::to_string(split_unassigned) +
                         " row(s) have no split while others are assigned");
  for (const auto& [subject, splits] : subject_splits)
    if (splits.size() > 1)
      violations.push_back("subject " + subject + " appears in multiple splits");
  for (const auto& [site, pools] : site_pools)
    if (pools.size() > 1)
      violations.push_back("site " + site + " appears in both pools");
  return violations;
}

std::uint64_t derive_job_seed(std::uint64_t master_seed,
                              const std::string& volume_id, int pass_index) {
  return hash_combine(hash_combine(master_seed, hash_str(volume_id)),
                      static_cast<std::uint64_t>(pass_index));
}

std::string GenerationReport::to_json() const {
  nlohmann::json j;
  j["total_jobs"] = total_jobs;
  j["generated"] = generated;
  j["skipped_resume"] = skipped_resume;
  j["failures"] = failures;
  j["failure_messages"] = failure_messages;
  j["per_split_counts"] = {{"train", per_split_counts[0]},
                           {"val", per_split_counts[1]},
                           {"test", per_split_counts[2]},
                           {"unassigned", per_split_counts[3]}};
  j["score_histogram"] = score_histogram;
  j["labels_manifest"] = labels_manifest_path;
  return j.dump(2);
}

namespace {

struct Job {
  const ManifestEntry* entry;
  int pass_index;
  std::uint64_t seed;
  std::string out_path;
  std::string sidecar_path;
};

struct JobResult {
  bool ok = false;
  bool skipped = false;
  double rms_score = 0.0;
  Split split = Split::Unassigned;
  std::string error;
};

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')
               ? c
               : '_';
  return out;
}

JobResult run_job(const Job& job, const GenerationOptions& opts) {
  JobResult res;
  res.split = job.entry->split;
  try {
    // resume: trust an existing pair only when the sidecar seed matches
    if (fs::exists(job.out_path) && fs::exists(job.sidecar_path)) {
      std::ifstream sc(job.sidecar_path);
      std::stringstream ss;
      ss << sc.rdbuf();
      const auto j = nlohmann::json::parse(ss.str(), nullptr, false);
      if (!j.is_discarded() && j.contains("seed") &&
          j["seed"].get<std::uint64_t>() == job.seed) {
        res.ok = true;
        res.skipped = true;
        res.rms_score = j.at("rms_score").get<double>();
        return res;
      }
    }

    const Volume3D src = read_volume(job.entry->path);
    PipelineOutput out =
        apply_pipeline(src, opts.augment, opts.motion, job.seed);

    RmsConfig rms = opts.rms;
    rms.center = out.volume.world_center();
    res.rms_score = trace_score(out.trace, rms);

    write_volume(out.volume, job.out_path);

    auto j = nlohmann::json::parse(
        motion_trace_to_json(out.trace, res.rms_score));
    j["seed"] = job.seed;  // the job seed, not the motion-stage sub-seed
    j["augment"] = nlohmann::json::parse(out.record.to_json());
    j["source"] = job.entry->path;
    j["split"] = to_string(job.entry->split);
    std::ofstream sc(job.sidecar_path);
    sc << j.dump(2) << "\n";
    if (!sc) throw IoError("sidecar write failed: " + job.sidecar_path);

    res.ok = true;
  } catch (const std::exception& e) {
    res.error = job.out_path + ": " + e.what();
  }
  return res;
}

}  // namespace

GenerationReport run_generation(const Manifest& entries,
                                const GenerationOptions& opts) {
  if (opts.passes < 1) throw ArgumentError("run_generation: passes < 1");
  if (opts.workers < 1) throw ArgumentError("run_generation: workers < 1");
  fs::create_directories(opts.out_dir);

  std::vector<Job> jobs;
  jobs.reserve(entries.size() * opts.passes);
  for (const auto& e : entries) {
    const std::string volume_id =
        e.subject_id + ":" + fs::path(e.path).filename().string();
    const std::string stem =
        sanitize(e.subject_id) + "_" +
        sanitize(fs::path(e.path).filename().replace_extension("")
                     .replace_extension("").string());
    for (int pass = 0; pass < opts.passes; ++pass) {
      char suffix[32];
      std::snprintf(suffix, sizeof(suffix), "_pass%04d", pass);
      const std::string base =
          (fs::path(opts.out_dir) / (stem + suffix)).string();
      jobs.push_back(Job{&e, pass,
                         derive_job_seed(opts.master_seed, volume_id, pass),
                         base + ".nii.gz", base + ".json"});
    }
  }

  std::vector<JobResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      results[i] = run_job(jobs[i], opts);
    }
  };
  if (opts.workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < opts.workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // reduce in job-index order so the report is scheduling-independent
  GenerationReport report;
  report.total_jobs = static_cast<int>(jobs.size());
  report.score_histogram.assign(opts.bins.n_bins, 0);
  const std::string labels_path =
      (fs::path(opts.out_dir) / "labels_manifest.csv").string();
  std::ofstream labels(labels_path);
  labels << "path,sidecar,rms_score,split\n";
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& r = results[i];
    if (!r.ok) {
      ++report.failures;
      report.failure_messages.push_back(r.error);
      continue;
    }
    if (r.skipped)
      ++report.skipped_resume;
    else
      ++report.generated;
    ++report.per_split_counts[static_cast<int>(r.split)];
    ++report.score_histogram[opts.bins.nearest_bin(r.rms_score)];
    char score[32];
    std::snprintf(score, sizeof(score), "%.9g", r.rms_score);
    labels << csv::join({jobs[i].out_path, jobs[i].sidecar_path, score,
                         to_string(r.split)})
           << "\n";
  }
  labels.close();
  report.labels_manifest_path = labels_path;

  if (report.failures >
      opts.max_failure_fraction * static_cast<double>(report.total_jobs))
    throw IoError("run_generation: failure fraction exceeded (" +
                  std::to_string(report.failures) + "/" +
                  std::to_string(report.total_jobs) + ")");
  return report;
}

}  // namespace mqc
