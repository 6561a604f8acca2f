#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <new>
#include <sstream>
#include <string>

#include "qfuse/commands.hpp"
#include "qfuse/errors.hpp"
#include "qfuse/qfuse.h"
#include "qfuse/snapshot.hpp"

struct qf_config {
  qfuse::RunConfig cfg;
};

struct qf_tensor {
  qfuse::Tensor t;
};

namespace {

thread_local std::string g_last_error;

qf_status fail(qf_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
qf_status guarded(F&& f) {
  g_last_error.clear();
  try {
    return f();
  } catch (const qfuse::ConfigError& e) {
    return fail(QF_ERR_CONFIG, e.what());
  } catch (const qfuse::DimensionError& e) {
    return fail(QF_ERR_DIMENSION, e.what());
  } catch (const qfuse::IoError& e) {
    return fail(QF_ERR_IO, e.what());
  } catch (const qfuse::ValidityError& e) {
    return fail(QF_ERR_VALIDITY, e.what());
  } catch (const qfuse::ContractError& e) {
    return fail(QF_ERR_CONTRACT, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(QF_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(QF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(QF_ERR_INTERNAL, e.what());
  }
}

qf_status copy_out(const std::string& s, char* buf, std::size_t buflen, std::size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && buflen) {
    const std::size_t n = std::min(buflen - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
  return QF_OK;
}

qfuse::LogFn wrap(qf_log_fn log, void* user) {
  if (!log) return {};
  return [log, user](const std::string& line) { log(line.c_str(), user); };
}

#define QF_REQUIRE(cond, what) \
  if (!(cond)) return fail(QF_ERR_USAGE, what)

}  // namespace

extern "C" {

const char* qf_version(void) { return "0.1.0"; }

const char* qf_status_name(qf_status status) {
  switch (status) {
    case QF_OK:
      return "ok";
    case QF_ERR_USAGE:
      return "usage error";
    case QF_ERR_CONFIG:
      return "config error";
    case QF_ERR_DIMENSION:
      return "dimension error";
    case QF_ERR_IO:
      return "i/o error";
    case QF_ERR_VALIDITY:
      return "validity error";
    case QF_ERR_CONTRACT:
      return "contract error";
    case QF_ERR_RUNTIME:
      return "run failure";
    case QF_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

const char* qf_last_error(void) { return g_last_error.c_str(); }

qf_status qf_config_create(qf_config** out) {
  QF_REQUIRE(out, "qf_config_create: null output pointer");
  return guarded([&] {
    *out = new qf_config{};
    return QF_OK;
  });
}

void qf_config_destroy(qf_config* cfg) { delete cfg; }

qf_status qf_config_load_file(qf_config* cfg, const char* path) {
  QF_REQUIRE(cfg && path, "qf_config_load_file: null argument");
  return guarded([&] {
    // Parse into a copy so a failing file leaves the handle untouched.
    qfuse::RunConfig next = cfg->cfg;
    std::ifstream in(path);
    if (!in) throw qfuse::IoError(std::string("cannot read config file ") + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    qfuse::apply_config_text(next, ss.str(), path);
    cfg->cfg = std::move(next);
    return QF_OK;
  });
}

qf_status qf_config_apply_text(qf_config* cfg, const char* text) {
  QF_REQUIRE(cfg && text, "qf_config_apply_text: null argument");
  return guarded([&] {
    qfuse::RunConfig next = cfg->cfg;
    qfuse::apply_config_text(next, text);
    cfg->cfg = std::move(next);
    return QF_OK;
  });
}

qf_status qf_config_set(qf_config* cfg, const char* key, const char* value) {
  QF_REQUIRE(cfg && key && value, "qf_config_set: null argument");
  return guarded([&] {
    qfuse::set_config_value(cfg->cfg, key, value);
    return QF_OK;
  });
}

qf_status qf_config_get(const qf_config* cfg, const char* key, char* buf, size_t buflen, size_t* needed) {
  QF_REQUIRE(cfg && key, "qf_config_get: null argument");
  return guarded([&] { return copy_out(qfuse::get_config_value(cfg->cfg, key), buf, buflen, needed); });
}

qf_status qf_config_dump(const qf_config* cfg, char* buf, size_t buflen, size_t* needed) {
  QF_REQUIRE(cfg, "qf_config_dump: null handle");
  return guarded([&] { return copy_out(qfuse::config_to_text(cfg->cfg), buf, buflen, needed); });
}

qf_status qf_config_hash(const qf_config* cfg, char out[17]) {
  QF_REQUIRE(cfg && out, "qf_config_hash: null argument");
  return guarded([&] { return copy_out(qfuse::config_hash(cfg->cfg), out, 17, nullptr); });
}

qf_status qf_config_validate(const qf_config* cfg) {
  QF_REQUIRE(cfg, "qf_config_validate: null handle");
  return guarded([&] {
    qfuse::validate(cfg->cfg);
    return QF_OK;
  });
}

qf_status qf_datagen(const qf_config* cfg, const char* out_dir, qf_log_fn log, void* user) {
  QF_REQUIRE(cfg && out_dir, "qf_datagen: null argument");
  return guarded([&] {
    qfuse::command_datagen(cfg->cfg, out_dir, wrap(log, user));
    return QF_OK;
  });
}

qf_status qf_train(const qf_config* cfg, const char* out_dir, qf_log_fn log, void* user) {
  QF_REQUIRE(cfg && out_dir, "qf_train: null argument");
  return guarded([&] {
    if (!qfuse::command_train(cfg->cfg, out_dir, wrap(log, user))) {
      return fail(QF_ERR_RUNTIME, "training hit a non-finite loss; see manifest.json");
    }
    return QF_OK;
  });
}

qf_status qf_eval(const qf_config* cfg, const char* out_dir, qf_log_fn log, void* user) {
  QF_REQUIRE(cfg && out_dir, "qf_eval: null argument");
  return guarded([&] {
    qfuse::command_eval(cfg->cfg, out_dir, wrap(log, user));
    return QF_OK;
  });
}

qf_status qf_ablate(const qf_config* cfg, const char* axis, const char* out_dir, qf_log_fn log, void* user) {
  QF_REQUIRE(cfg && axis && out_dir, "qf_ablate: null argument");
  return guarded([&] {
    if (!qfuse::command_ablate(cfg->cfg, qfuse::ablation_axis_from_string(axis), out_dir, wrap(log, user))) {
      return fail(QF_ERR_RUNTIME, "one or more variants were aborted; see flagged rows");
    }
    return QF_OK;
  });
}

qf_status qf_gradcheck(uint64_t seed, qf_log_fn log, void* user, int* passed) {
  return guarded([&] {
    const bool ok = qfuse::command_gradcheck(seed, wrap(log, user));
    if (passed) *passed = ok ? 1 : 0;
    return ok ? QF_OK : fail(QF_ERR_RUNTIME, "gradient check failed");
  });
}

qf_status qf_inspect(const char* path, qf_log_fn log, void* user) {
  QF_REQUIRE(path, "qf_inspect: null path");
  return guarded([&] {
    const std::string text = qfuse::inspect_path(path);
    if (log) {
      std::istringstream lines(text);
      for (std::string line; std::getline(lines, line);) log(line.c_str(), user);
    }
    return QF_OK;
  });
}

qf_status qf_tensor_create(size_t rank, const size_t* extents, const double* data, qf_tensor** out) {
  QF_REQUIRE(out && (rank == 0 || extents), "qf_tensor_create: null argument");
  return guarded([&] {
    qfuse::Shape shape(extents, extents + rank);
    const std::size_t n = qfuse::shape_numel(shape);
    std::vector<double> values(n, 0.0);
    if (data) std::copy(data, data + n, values.begin());
    *out = new qf_tensor{qfuse::Tensor::from(shape, std::move(values))};
    return QF_OK;
  });
}

qf_status qf_tensor_load(const char* path, qf_tensor** out) {
  QF_REQUIRE(path && out, "qf_tensor_load: null argument");
  return guarded([&] {
    *out = new qf_tensor{qfuse::load_tensor(path)};
    return QF_OK;
  });
}

qf_status qf_tensor_save(const qf_tensor* t, const char* path) {
  QF_REQUIRE(t && path, "qf_tensor_save: null argument");
  return guarded([&] {
    qfuse::save_tensor(path, t->t);
    return QF_OK;
  });
}

void qf_tensor_destroy(qf_tensor* t) { delete t; }

size_t qf_tensor_rank(const qf_tensor* t) { return t ? t->t.rank() : 0; }

size_t qf_tensor_extent(const qf_tensor* t, size_t axis) {
  return t && axis < t->t.rank() ? t->t.dim(axis) : 0;
}

size_t qf_tensor_numel(const qf_tensor* t) { return t ? t->t.numel() : 0; }

const double* qf_tensor_data(const qf_tensor* t) { return t ? t->t.data().data() : nullptr; }

qf_status qf_tensor_stats_compute(const qf_tensor* t, qf_tensor_stats* out) {
  QF_REQUIRE(t && out, "qf_tensor_stats_compute: null argument");
  qf_tensor_stats s{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), 0.0, 0.0, 0};
  double sum = 0.0, sq = 0.0;
  for (double v : t->t.data()) {
    if (!std::isfinite(v)) {
      ++s.nonfinite;
      continue;
    }
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    sum += v;
    sq += v * v;
  }
  const std::size_t finite = t->t.numel() - s.nonfinite;
  s.mean = finite ? sum / static_cast<double>(finite) : std::nan("");
  s.l2 = std::sqrt(sq);
  *out = s;
  return QF_OK;
}

}  // extern "C"
