#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "octchange/pipeline/pipeline.hpp"

namespace octchange {

struct Response {
  int status = 200;
  std::string type = "application/json";
  std::string body;

  static Response json(const nlohmann::json& j, int status = 200) { return {status, "application/json", j.dump() + "\n"}; }
  static Response error(int status, const std::string& msg) { return json({{"error", msg}}, status); }
};

// Request handlers over the job store at <work>/pairs and <work>/studies.
// Reads take no locks; writes are serialized per job.
class Service {
 public:
  explicit Service(fs::path work) : work_(std::move(work)) {}

  const fs::path& work() const { return work_; }

  Response list_pairs() const {
    nlohmann::json out = nlohmann::json::array();
    const fs::path root = work_ / "pairs";
    if (fs::exists(root)) {
      std::vector<std::string> ids;
      for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / "job.json")) ids.push_back(e.path().filename().string());
      std::sort(ids.begin(), ids.end());
      for (const std::string& id : ids) {
        const fs::path dir = root / id;
        const auto job = read_json(dir / "job.json");
        const auto st = fs::exists(dir / "status.json") ? read_json(dir / "status.json") : nlohmann::json::object();
        out.push_back({{"pair_id", id},
                       {"prior_study", job["prior"]["id"]},
                       {"current_study", job["current"]["id"]},
                       {"variant", job["variant"]},
                       {"status", st.value("status", "pending")},
                       {"revision", st.value("revision", 0)}});
      }
    }
    return Response::json(out);
  }

  Response pair_status(const std::string& id) const {
    return guarded(id, [&](const fs::path& dir) {
      nlohmann::json st = read_json(dir / "status.json");
      if (fs::exists(dir / "landmark_request.json")) st["landmark_request"] = read_json(dir / "landmark_request.json");
      return Response::json(st);
    });
  }

  Response images(const std::string& id) const {
    return guarded(id, [&](const fs::path& dir) {
      nlohmann::json out = nlohmann::json::object();
      for (const char* name : {"prior_ir", "current_ir", "overlay"})
        if (fs::exists(dir / "images" / (std::string(name) + ".png")))
          out[name] = "/pairs/" + id + "/images/" + name + ".png";
      return Response::json(out);
    });
  }

  Response image(const std::string& id, const std::string& name) const {
    if (name != "prior_ir" && name != "current_ir" && name != "overlay") return Response::error(404, "no such image");
    return guarded(id, [&](const fs::path& dir) {
      const fs::path p = dir / "images" / (name + ".png");
      if (!fs::exists(p)) return Response::error(404, "image not rendered yet");
      return Response{200, "image/png", read_file_bytes(p)};
    });
  }

  Response overlays(const std::string& id) const {
    return guarded(id, [&](const fs::path& dir) {
      if (!done(dir)) return not_ready(dir);
      const auto job = read_json(dir / "job.json");
      const StudyMeta pm = job["prior"]["meta"].get<StudyMeta>(), cm = job["current"]["meta"].get<StudyMeta>();
      const auto rect = [](const Rect& r) { return nlohmann::json{r.x0, r.y0, r.h, r.w}; };
      const auto report = read_json(dir / "report.json");
      return Response::json({{"registration", read_json(dir / "registration.json")},
                             {"fov_prior", rect(pm.fov())},
                             {"fov_current", rect(cm.fov())},
                             {"common_fov", report["common_fov"]},
                             {"prior_segments", records(prior_segments_path(dir))},
                             {"current_segments", records(dir / "current_segments.jsonl")},
                             {"prior_lesions", read_json(dir / "prior_lesions.json")},
                             {"current_lesions", read_json(dir / "current_lesions.json")}});
    });
  }

  Response report(const std::string& id) const {
    return guarded(id, [&](const fs::path& dir) {
      if (!done(dir)) return not_ready(dir);
      return Response{200, "application/json", read_file_bytes(dir / "report.json")};
    });
  }

  // Matched prior/current slice pair with segments and IR locator lines.
  Response slice(const std::string& id, int k) const {
    return guarded(id, [&](const fs::path& dir) {
      if (!done(dir)) return not_ready(dir);
      const auto job = read_json(dir / "job.json");
      const StudyMeta pm = job["prior"]["meta"].get<StudyMeta>(), cm = job["current"]["meta"].get<StudyMeta>();
      if (k < 0 || k >= pm.n_slices) return Response::error(404, "slice out of range");
      const RegistrationResult reg = registration_from_json(read_json(dir / "registration.json"));
      const auto kc = matched_slice(match_columns(pm, cm, reg.transform), k);
      const AnnotationSet pa = load_annotations(prior_segments_path(dir));
      const AnnotationSet ca = load_annotations(dir / "current_segments.jsonl");
      auto intervals = [](const AnnotationSet& a, int s) {
        nlohmann::json arr = nlohmann::json::array();
        if (auto it = a.slices.find(s); it != a.slices.end())
          for (const Interval& iv : it->second) arr.push_back({iv.left, iv.right});
        return arr;
      };
      auto locator = [](const StudyMeta& m, int s) {
        const Vec2 a = ir_from_oct(m, s + 0.5, 0.0), b = ir_from_oct(m, s + 0.5, m.oct_width);
        return nlohmann::json{{a.x, a.y}, {b.x, b.y}};
      };
      nlohmann::json out{{"prior_slice", k},
                         {"prior_intervals", intervals(pa, k)},
                         {"prior_locator", locator(pm, k)},
                         {"current_slice", nullptr}};
      if (kc) {
        out["current_slice"] = *kc;
        out["current_intervals"] = intervals(ca, *kc);
        out["current_locator"] = locator(cm, *kc);
      }
      return Response::json(out);
    });
  }

  // Body: {"landmarks": [{"prior_xy": [r, c], "current_xy": [r, c]}, ...],
  // "revision": n (optional)}. Replaces earlier landmarks and re-runs the job.
  Response post_landmarks(const std::string& id, const std::string& body) {
    if (!safe_id(id)) return Response::error(400, "invalid pair id");
    const fs::path dir = work_ / "pairs" / id;
    if (!fs::exists(dir / "job.json")) return Response::error(404, "unknown pair " + id);
    std::lock_guard lock(job_mutex("pair/" + id));
    std::vector<PointPair> lm;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
      for (const auto& e : j.at("landmarks")) {
        PointPair p;
        p.prior = {e.at("prior_xy").at(0).get<double>(), e.at("prior_xy").at(1).get<double>()};
        p.current = {e.at("current_xy").at(0).get<double>(), e.at("current_xy").at(1).get<double>()};
        lm.push_back(p);
      }
      validate_landmarks(lm);
    } catch (const nlohmann::json::exception& e) {
      return Response::error(400, std::string("bad landmark body: ") + e.what());
    } catch (const Error& e) {
      return Response::error(400, e.what());
    }
    const int rev = job_revision(dir);
    if (j.contains("revision") && j["revision"].get<int>() != rev)
      return Response::error(409, "revision " + std::to_string(rev) + " is current");
    write_file_bytes(dir / "landmarks.jsonl", landmarks_to_string(lm));
    write_status(dir, read_json(dir / "status.json").value("status", "pending"), rev + 1);
    try {
      const PairResult r = resume_pair(work_, id);
      return Response::json({{"pair_id", id},
                             {"status", to_string(r.registration.status)},
                             {"vessel_dice", r.registration.vessel_overlap},
                             {"revision", rev + 1}});
    } catch (const Error& e) {
      write_status(dir, "error", rev + 1, e.what());
      return Response::error(500, e.what());
    }
  }

  // Body: {"slices": [{"slice": k, "intervals": [[l, r], ...]}, ...],
  // "label": optional, "revision": optional}. Stored as the study's
  // validated prior, replacing any earlier one.
  Response post_segments(const std::string& id, const std::string& body) {
    if (!safe_id(id)) return Response::error(400, "invalid study id");
    std::lock_guard lock(job_mutex("study/" + id));
    const fs::path rev_path = work_ / "studies" / id / "revision.json";
    const int rev = fs::exists(rev_path) ? read_json(rev_path).value("revision", 0) : 0;
    AnnotationSet a;
    try {
      const auto j = nlohmann::json::parse(body);
      if (j.contains("revision") && j["revision"].get<int>() != rev)
        return Response::error(409, "revision " + std::to_string(rev) + " is current");
      std::string lines;
      for (const auto& rec : j.at("slices")) lines += rec.dump() + "\n";
      a = annotations_from_string(lines);
      if (j.contains("label")) a.label = j["label"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      return Response::error(400, std::string("bad segments body: ") + e.what());
    } catch (const Error& e) {
      return Response::error(400, e.what());
    }
    const fs::path p = store_validated(work_, id, a);
    write_file_bytes(rev_path, nlohmann::json{{"revision", rev + 1}}.dump() + "\n");
    return Response::json({{"study_id", id},
                           {"stored", fs::relative(p, work_).string()},
                           {"sha256", sha256_file(p)},
                           {"revision", rev + 1},
                           {"used_by_next_cascade", true}});
  }

 private:
  static bool done(const fs::path& dir) {
    return fs::exists(dir / "status.json") && read_json(dir / "status.json").value("status", "") == "done";
  }

  static Response not_ready(const fs::path& dir) {
    const auto st = fs::exists(dir / "status.json") ? read_json(dir / "status.json") : nlohmann::json::object();
    return Response::json({{"error", "pair has no results"}, {"status", st.value("status", "pending")}}, 409);
  }

  static fs::path prior_segments_path(const fs::path& dir) {
    return fs::exists(dir / "prior_mask.jsonl") ? dir / "prior_mask.jsonl" : dir / "prior_segments.jsonl";
  }

  static nlohmann::json records(const fs::path& p) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [k, ivs] : load_annotations(p).slices) {
      nlohmann::json iv = nlohmann::json::array();
      for (const Interval& i : ivs) iv.push_back({i.left, i.right});
      if (!iv.empty()) arr.push_back({{"slice", k}, {"intervals", iv}});
    }
    return arr;
  }

  Response guarded(const std::string& id, const std::function<Response(const fs::path&)>& fn) const {
    if (!safe_id(id)) return Response::error(400, "invalid pair id");
    const fs::path dir = work_ / "pairs" / id;
    if (!fs::exists(dir / "job.json")) return Response::error(404, "unknown pair " + id);
    try {
      return fn(dir);
    } catch (const std::exception& e) {
      return Response::error(500, e.what());
    }
  }

  std::mutex& job_mutex(const std::string& key) {
    std::lock_guard lock(map_mutex_);
    auto& m = locks_[key];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
  }

  fs::path work_;
  std::mutex map_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

inline void bind_routes(httplib::Server& srv, Service& svc) {
  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, r.type);
  };
  srv.Get("/pairs", [&, send](const httplib::Request&, httplib::Response& res) { send(res, svc.list_pairs()); });
  srv.Get(R"(/pairs/([^/]+)/status)",
          [&, send](const httplib::Request& q, httplib::Response& res) { send(res, svc.pair_status(q.matches[1])); });
  srv.Get(R"(/pairs/([^/]+)/images)",
          [&, send](const httplib::Request& q, httplib::Response& res) { send(res, svc.images(q.matches[1])); });
  srv.Get(R"(/pairs/([^/]+)/images/([a-z_]+)\.png)", [&, send](const httplib::Request& q, httplib::Response& res) {
    send(res, svc.image(q.matches[1], q.matches[2]));
  });
  srv.Get(R"(/pairs/([^/]+)/overlays)",
          [&, send](const httplib::Request& q, httplib::Response& res) { send(res, svc.overlays(q.matches[1])); });
  srv.Get(R"(/pairs/([^/]+)/report)",
          [&, send](const httplib::Request& q, httplib::Response& res) { send(res, svc.report(q.matches[1])); });
  srv.Get(R"(/pairs/([^/]+)/slices/(\d{1,6}))", [&, send](const httplib::Request& q, httplib::Response& res) {
    send(res, svc.slice(q.matches[1], std::stoi(q.matches[2])));
  });
  srv.Post(R"(/pairs/([^/]+)/landmarks)", [&, send](const httplib::Request& q, httplib::Response& res) {
    send(res, svc.post_landmarks(q.matches[1], q.body));
  });
  srv.Post(R"(/studies/([^/]+)/segments)", [&, send](const httplib::Request& q, httplib::Response& res) {
    send(res, svc.post_segments(q.matches[1], q.body));
  });
}

// Blocks until the server stops.
inline void serve(const fs::path& work, const std::string& host, int port) {
  Service svc(work);
  httplib::Server srv;
  bind_routes(srv, svc);
  if (!srv.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  srv.listen_after_bind();
}

}  // namespace octchange
