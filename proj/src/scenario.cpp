#include "spherecar/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "spherecar/errors.hpp"
#include "spherecar/tracking_error.hpp"

namespace spherecar {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Strict view of one JSON object: every key must be consumed before finish().
class Section {
 public:
  Section(const json& node, std::string path) : node_(&node), path_(std::move(path)) {
    if (!node.is_object()) {
      fail(path_, "expected an object");
    }
  }

  [[noreturn]] static void fail(const std::string& field, const std::string& what) {
    throw ConfigError(field + ": " + what);
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) const { return node_->contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return node_->at(key);
  }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
    if (!has(key)) {
      if (!fallback) {
        fail(field(key), "required");
      }
      return *fallback;
    }
    const json& v = raw(key);
    if (!v.is_number()) {
      fail(field(key), "expected a number");
    }
    const double x = v.get<double>();
    if (!std::isfinite(x)) {
      fail(field(key), "must be finite");
    }
    return x;
  }

  double positive(const std::string& key, std::optional<double> fallback = std::nullopt) {
    const double x = number(key, fallback);
    if (!(x > 0.0)) {
      fail(field(key), "must be positive");
    }
    return x;
  }

  long long integer(const std::string& key, long long fallback) {
    if (!has(key)) {
      return fallback;
    }
    const json& v = raw(key);
    if (!v.is_number_integer()) {
      fail(field(key), "expected an integer");
    }
    return v.get<long long>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) {
      return fallback;
    }
    const json& v = raw(key);
    if (!v.is_boolean()) {
      fail(field(key), "expected true or false");
    }
    return v.get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) {
      return fallback;
    }
    const json& v = raw(key);
    if (!v.is_string()) {
      fail(field(key), "expected a string");
    }
    return v.get<std::string>();
  }

  std::optional<Vec3> vector(const std::string& key) {
    if (!has(key)) {
      return std::nullopt;
    }
    const json& v = raw(key);
    if (!v.is_array() || v.size() != 3 ||
        !std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); })) {
      fail(field(key), "expected an array of three numbers");
    }
    const Vec3 out{v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
    if (!out.allFinite()) {
      fail(field(key), "must be finite");
    }
    return out;
  }

  std::optional<Section> child(const std::string& key) {
    if (!has(key)) {
      return std::nullopt;
    }
    return Section(raw(key), field(key));
  }

  void finish() const {
    for (const auto& item : node_->items()) {
      if (!seen_.contains(item.key())) {
        fail(field(item.key()), "unknown key");
      }
    }
  }

 private:
  const json* node_;
  std::string path_;
  std::set<std::string> seen_;
};

Vec3 unitVector(const Vec3& v, const std::string& field) {
  const double n = v.norm();
  if (!(n > 1e-12)) {
    Section::fail(field, "must be non-zero");
  }
  return v / n;
}

std::complex<double> parsePole(const json& v, const std::string& field) {
  if (v.is_number()) {
    return {v.get<double>(), 0.0};
  }
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
    return {v[0].get<double>(), v[1].get<double>()};
  }
  Section::fail(field, "expected a number or [re, im]");
}

void readGeometry(Section s, ScenarioConfig& c) {
  c.rho = s.positive("rho");
  c.wheelbase = s.positive("l");
  c.wheelRadius = s.number("r", 0.0);
  if (c.wheelRadius < 0.0) {
    Section::fail("geometry.r", "must be non-negative");
  }
  s.finish();
  if (!(c.wheelbase / (c.rho + c.wheelRadius) < kPi)) {
    Section::fail("geometry.l", "car does not fit on the sphere");
  }
}

void readReference(Section s, ReferenceConfig& r) {
  const std::string kind = s.text("kind", "great-circle");
  if (kind == "great-circle") {
    r.kind = ReferenceKind::kGreatCircle;
    r.axis = unitVector(s.vector("axis").value_or(Vec3::UnitZ()), s.field("axis"));
    if (auto start = s.vector("start")) {
      const Vec3 u = unitVector(*start, s.field("start"));
      if (std::abs(u.dot(r.axis)) > 1e-9) {
        Section::fail(s.field("start"), "must be orthogonal to the axis");
      }
      r.start = u;
    }
  } else if (kind == "latitude-circle" || kind == "flat-curve") {
    r.kind = kind == "latitude-circle" ? ReferenceKind::kLatitudeCircle : ReferenceKind::kFlatCurve;
    r.colatitude = s.number("colatitude", 0.5 * kPi);
    if (!(r.colatitude > 0.0 && r.colatitude < kPi)) {
      Section::fail(s.field("colatitude"), "must lie strictly between 0 and pi");
    }
    if (r.kind == ReferenceKind::kLatitudeCircle) {
      r.pole = unitVector(s.vector("pole").value_or(Vec3::UnitZ()), s.field("pole"));
    } else {
      r.amplitude = s.number("amplitude", 0.0);
      r.frequency = s.number("frequency", 1.0);
      r.azimuthRate = s.number("azimuth_rate", 1.0);
      r.duration = s.positive("duration", 2.0 * kPi);
      if (!(r.colatitude - std::abs(r.amplitude) > 0.0 &&
            r.colatitude + std::abs(r.amplitude) < kPi)) {
        Section::fail(s.field("amplitude"), "curve would cross a pole");
      }
      if (r.azimuthRate == 0.0) {
        Section::fail(s.field("azimuth_rate"), "must be non-zero");
      }
    }
  } else {
    Section::fail(s.field("kind"), "expected great-circle, latitude-circle or flat-curve");
  }
  s.finish();
}

void readController(Section s, ScenarioConfig& c) {
  c.gains.cSigma = s.positive("c_sigma", c.gains.cSigma);
  c.gains.cDelta1 = s.positive("c_delta1", c.gains.cDelta1);
  c.gains.cDelta0 = s.positive("c_delta0", c.gains.cDelta0);
  if (auto p = s.child("policy")) {
    SingularityPolicy& q = c.policy;
    q.denominatorEpsilon = p->positive("denominator_epsilon", q.denominatorEpsilon);
    q.limitEpsilon = p->positive("limit_epsilon", q.limitEpsilon);
    q.misalignmentEpsilon = p->positive("misalignment_epsilon", q.misalignmentEpsilon);
    q.affineEpsilon = p->positive("affine_epsilon", q.affineEpsilon);
    q.maxCurvature = p->number("max_curvature", q.maxCurvature);
    if (q.maxCurvature < 0.0) {
      Section::fail(p->field("max_curvature"), "must be non-negative");
    }
    q.maxSteering = p->positive("max_steering", q.maxSteering);
    if (!(q.maxSteering < 0.5 * kPi)) {
      Section::fail(p->field("max_steering"), "must be below pi/2");
    }
    q.saturate = p->boolean("saturate", q.saturate);
    p->finish();
  }
  s.finish();
}

void readObserver(Section s, ScenarioConfig& c) {
  ObserverConfig o;
  if (s.has("poles")) {
    const json& v = s.raw("poles");
    if (!v.is_array() || v.size() != 3) {
      Section::fail(s.field("poles"), "expected three poles");
    }
    std::array<std::complex<double>, 3> poles;
    for (std::size_t i = 0; i < 3; ++i) {
      poles[i] = parsePole(v[i], s.field("poles") + "[" + std::to_string(i) + "]");
    }
    o.poles = poles;
  }
  if (auto g = s.child("gains")) {
    ObserverGains l;
    l.l11 = g->number("l11", 0.0);
    l.l12 = g->number("l12", 0.0);
    l.l21 = g->number("l21", 0.0);
    l.l22 = g->number("l22", 0.0);
    l.l31 = g->number("l31", 0.0);
    l.l32 = g->number("l32", 0.0);
    l.scheduled = g->boolean("scheduled", true);
    g->finish();
    o.gains = l;
  }
  if (o.poles.has_value() == o.gains.has_value()) {
    Section::fail(s.field("poles"), "exactly one of poles and gains is required");
  }
  o.l32 = s.number("l32", 0.0);
  o.maxInitialError = s.positive("max_initial_error", o.maxInitialError);
  s.finish();
  c.observer = o;
}

void readInitial(Section s, ScenarioConfig& c, std::vector<std::string>* warnings) {
  InitialConfig& i = c.initial;
  if (auto y = s.vector("position")) {
    i.absolute = true;
    const double n = y->norm();
    const double dev = std::abs(n - c.rho);
    if (dev > 1e-6 * std::max(1.0, c.rho)) {
      Section::fail(s.field("position"), "not on the sphere of radius geometry.rho");
    }
    if (dev > 1e-9 * std::max(1.0, c.rho) && warnings) {
      std::ostringstream msg;
      msg << s.field("position") << ": |y| = " << formatNumber(n) << " normalised to rho";
      warnings->push_back(msg.str());
    }
    i.position = *y * (c.rho / n);
    i.heading = s.number("heading", 0.0);
    if (s.has("sigma") || s.has("delta") || s.has("heading_offset")) {
      Section::fail(s.field("position"), "cannot be combined with sigma, delta or heading_offset");
    }
  } else {
    i.sigma = s.number("sigma", 0.0);
    if (!(i.sigma >= 0.0 && i.sigma < kPi)) {
      Section::fail(s.field("sigma"), "must lie in [0, pi)");
    }
    i.delta = s.number("delta", 0.0);
    i.headingOffset = s.number("heading_offset", 0.0);
  }
  s.finish();
}

void readEstimate(Section s, ScenarioConfig& c) {
  c.estimate.angle = s.number("angle", 0.0);
  if (!(c.estimate.angle >= 0.0 && c.estimate.angle < kPi)) {
    Section::fail(s.field("angle"), "must lie in [0, pi)");
  }
  if (auto a = s.vector("axis")) {
    c.estimate.axis = unitVector(*a, s.field("axis"));
  }
  s.finish();
}

void readOpenLoop(Section s, ScenarioConfig& c) {
  OpenLoopConfig& o = c.openLoop;
  o.speed = s.number("speed", o.speed);
  o.steering = s.number("steering", o.steering);
  o.amplitude = s.number("amplitude", o.amplitude);
  o.frequency = s.number("frequency", o.frequency);
  if (!(std::abs(o.steering) + std::abs(o.amplitude) < 0.5 * kPi)) {
    Section::fail(s.field("steering"), "|steering| + |amplitude| must be below pi/2");
  }
  s.finish();
}

void readIntegrator(Section s, ScenarioConfig& c) {
  const std::string method = s.text("method", "rkmk4");
  if (method == "rkmk4") {
    c.integrator.method = IntegratorMethod::kRkmk4;
  } else if (method == "lie-euler") {
    c.integrator.method = IntegratorMethod::kLieEuler;
  } else {
    Section::fail(s.field("method"), "expected rkmk4 or lie-euler");
  }
  c.integrator.step = s.positive("step", c.integrator.step);
  const long long every = s.integer("renormalize_every", c.integrator.renormalizeEvery);
  if (every < 0 || every > 1000000000) {
    Section::fail(s.field("renormalize_every"), "out of range");
  }
  c.integrator.renormalizeEvery = static_cast<int>(every);
  s.finish();
}

void readRun(Section s, ScenarioConfig& c) {
  c.sEnd = s.positive("s_end");
  const long long every = s.integer("record_every", 1);
  if (every < 1 || every > 1000000000) {
    Section::fail(s.field("record_every"), "must be a positive integer");
  }
  c.recordEvery = static_cast<int>(every);
  if (s.has("seed")) {
    const json& v = s.raw("seed");
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      Section::fail(s.field("seed"), "expected a non-negative integer");
    }
    c.seed = v.get<std::uint64_t>();
  }
  s.finish();
}

void readOutput(Section s, ScenarioConfig& c) {
  c.csvName = s.text("csv", c.csvName);
  c.summaryName = s.text("summary", c.summaryName);
  for (const auto* name : {&c.csvName, &c.summaryName}) {
    if (name->empty() || std::filesystem::path(*name).has_parent_path()) {
      Section::fail(s.field(name == &c.csvName ? "csv" : "summary"), "expected a plain file name");
    }
  }
  s.finish();
}

std::size_t lineOf(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

ScenarioConfig parseConfig(const std::string& text, std::vector<std::string>* warnings) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is one past the offending character.
    std::ostringstream msg;
    msg << "parse error at line " << lineOf(text, e.byte == 0 ? 0 : e.byte - 1) << ": " << e.what();
    throw ConfigError(msg.str());
  }
  ScenarioConfig c;
  Section root(doc, "");
  if (!root.has("geometry")) {
    Section::fail("geometry", "required");
  }
  readGeometry(*root.child("geometry"), c);
  if (auto s = root.child("reference")) readReference(*s, c.reference);
  if (auto s = root.child("controller")) readController(*s, c);
  if (auto s = root.child("observer")) readObserver(*s, c);
  if (auto s = root.child("initial")) readInitial(*s, c, warnings);
  if (auto s = root.child("estimate")) readEstimate(*s, c);
  if (auto s = root.child("open_loop")) readOpenLoop(*s, c);
  if (auto s = root.child("integrator")) readIntegrator(*s, c);
  if (!root.has("run")) {
    Section::fail("run", "required");
  }
  readRun(*root.child("run"), c);
  if (auto s = root.child("output")) readOutput(*s, c);
  root.finish();
  return c;
}

ScenarioConfig loadConfig(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read configuration " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parseConfig(buffer.str(), warnings);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

namespace {

CurveFunction curveFor(const ScenarioConfig& c) {
  const ReferenceConfig& r = c.reference;
  switch (r.kind) {
    case ReferenceKind::kGreatCircle: {
      const GreatCircleReference ref = r.start ? GreatCircleReference(r.axis, *r.start, c.rho)
                                               : GreatCircleReference(r.axis, c.rho);
      return greatCircleCurve(r.axis, ref.at(0.0).frame.binormal(), c.rho);
    }
    case ReferenceKind::kLatitudeCircle: {
      const Mat3 toPole = configFromPosition(c.rho * r.pole, 0.0, c.rho).matrix();
      CurveFunction base = latitudeCircleCurve(r.colatitude, c.rho);
      return [toPole, base](double t) {
        CurveJet j = base(t);
        j.y = toPole * j.y;
        j.dy = toPole * j.dy;
        j.ddy = toPole * j.ddy;
        if (j.dddy) {
          j.dddy = toPole * *j.dddy;
        }
        return j;
      };
    }
    case ReferenceKind::kFlatCurve:
      return wobbleCurve(r.colatitude, r.amplitude, r.frequency, r.azimuthRate, c.rho);
  }
  throw ConfigError("reference.kind: unsupported");
}

double curveDuration(const ScenarioConfig& c) {
  switch (c.reference.kind) {
    case ReferenceKind::kGreatCircle:
      return 2.0 * kPi * c.rho;
    case ReferenceKind::kLatitudeCircle:
      return 2.0 * kPi * c.rho * std::sin(c.reference.colatitude);
    case ReferenceKind::kFlatCurve:
      return c.reference.duration;
  }
  return 0.0;
}

}  // namespace

std::unique_ptr<Reference> makeReference(const ScenarioConfig& c) {
  const ReferenceConfig& r = c.reference;
  switch (r.kind) {
    case ReferenceKind::kGreatCircle:
      return r.start ? std::make_unique<GreatCircleReference>(r.axis, *r.start, c.rho)
                     : std::make_unique<GreatCircleReference>(r.axis, c.rho);
    case ReferenceKind::kLatitudeCircle:
      return std::make_unique<LatitudeCircleReference>(r.colatitude, c.rho, r.pole);
    case ReferenceKind::kFlatCurve:
      return std::make_unique<FlatCurveReference>(curveFor(c), 0.0, r.duration, c.geometry());
  }
  throw ConfigError("reference.kind: unsupported");
}

Rotation3 initialState(const ScenarioConfig& c, const Rotation3& referenceStart) {
  const InitialConfig& i = c.initial;
  if (i.absolute) {
    return configFromPosition(i.position, i.heading, c.rho);
  }
  const Vec3 axis{-std::sin(i.delta), -std::cos(i.delta), 0.0};
  return referenceStart * expSO3(axis, i.sigma) * expSO3(Vec3::UnitZ(), i.headingOffset);
}

Rotation3 initialEstimate(const ScenarioConfig& c, const Rotation3& truth) {
  Vec3 axis = Vec3::UnitX();
  if (c.estimate.axis) {
    axis = *c.estimate.axis;
  } else {
    std::mt19937_64 rng(c.seed);
    std::normal_distribution<double> normal;
    do {
      axis = Vec3{normal(rng), normal(rng), normal(rng)};
    } while (axis.norm() < 1e-6);
    axis.normalize();
  }
  return truth * expSO3(axis, c.estimate.angle);
}

int exitCode(RunStatus status) {
  switch (status) {
    case RunStatus::kCompleted:
      return 0;
    case RunStatus::kConfigError:
      return 1;
    case RunStatus::kControllerFailure:
      return 2;
    case RunStatus::kOutOfRegime:
      return 3;
  }
  return 1;
}

namespace {

std::string_view statusName(RunStatus status) {
  switch (status) {
    case RunStatus::kCompleted:
      return "completed";
    case RunStatus::kControllerFailure:
      return "controller-failure";
    case RunStatus::kOutOfRegime:
      return "out-of-regime";
    case RunStatus::kConfigError:
      return "config-error";
  }
  return "unknown";
}

std::vector<double> runGrid(const ScenarioConfig& c) {
  const double h = c.integrator.step;
  const double ratio = c.sEnd / h;
  const double rounded = std::round(ratio);
  const auto steps = static_cast<std::size_t>(
      std::abs(ratio - rounded) <= 1e-9 * std::max(1.0, ratio) ? rounded : std::ceil(ratio));
  return uniformGrid(0.0, h, std::max<std::size_t>(steps, 1));
}

bool recorded(const ScenarioConfig& c, std::size_t k, std::size_t last) {
  return k % static_cast<std::size_t>(c.recordEvery) == 0 || k == last;
}

ErrorAngles anglesOrAntipodal(const Rotation3& g, const Rotation3& gd) {
  try {
    return errorAngles(g, gd);
  } catch (const AntipodalError&) {
    return {kPi, 0.0};
  }
}

ObserverGains resolveGains(const ScenarioConfig& c) {
  if (!c.observer) {
    throw ConfigError("observer: section required for this mode");
  }
  if (c.observer->gains) {
    return *c.observer->gains;
  }
  try {
    return placePoles(*c.observer->poles, c.rho, c.observer->l32);
  } catch (const PlacementError& e) {
    throw ConfigError(std::string("observer.poles: ") + e.what());
  }
}

ordered_json complexList(const std::array<std::complex<double>, 3>& values) {
  ordered_json out = ordered_json::array();
  for (const auto& v : values) {
    out.push_back({v.real(), v.imag()});
  }
  return out;
}

ordered_json gainsJson(const ObserverGains& g) {
  return {{"l11", g.l11},
          {"l12", g.l12},
          {"l21", g.l21},
          {"l22", g.l22},
          {"l31", g.l31},
          {"l32", g.l32},
          {"scheduled", g.scheduled}};
}

ordered_json baseSummary(const ScenarioConfig& c, std::string_view mode, const RunResult& r) {
  ordered_json s;
  s["mode"] = mode;
  s["status"] = statusName(r.status);
  s["message"] = r.message;
  s["s_end"] = c.sEnd;
  s["step"] = c.integrator.step;
  s["records"] = r.records.size();
  s["seed"] = c.seed;
  s["generator"] = kGeneratorName;
  return s;
}

template <class Body>
void guarded(RunResult& result, Body body) {
  try {
    body();
  } catch (const OutOfRegime& e) {
    result.status = RunStatus::kOutOfRegime;
    result.message = e.what();
  } catch (const ConfigError& e) {
    result.status = RunStatus::kConfigError;
    result.message = e.what();
  } catch (const Error& e) {
    result.status = RunStatus::kControllerFailure;
    result.message = e.what();
  }
}

struct ModeCounts {
  std::size_t limit = 0;
  std::size_t fallback = 0;
  std::size_t secant = 0;
  std::size_t saturated = 0;

  void add(SteeringMode m) {
    switch (m) {
      case SteeringMode::kLimit:
        ++limit;
        break;
      case SteeringMode::kFallback:
        ++fallback;
        break;
      case SteeringMode::kSecant:
        ++secant;
        break;
      case SteeringMode::kSaturated:
        ++saturated;
        break;
      case SteeringMode::kAffine:
        break;
    }
  }
};

void trackingSummary(ordered_json& s, const RunResult& r, const ScenarioConfig& c,
                     const ModeCounts& counts) {
  s["c_sigma"] = c.gains.cSigma;
  s["sigma_initial"] = r.records.empty() ? 0.0 : r.records.front().sigma;
  s["sigma_final"] = r.records.empty() ? 0.0 : r.records.back().sigma;
  const double rate = fitDecayRate(r.records);
  s["sigma_decay_rate"] = std::isfinite(rate) ? ordered_json(rate) : ordered_json(nullptr);
  s["delta_ode_residual_max"] = deltaOdeResidual(r.records, c.gains);
  s["fallback_count"] = counts.fallback;
  s["limit_count"] = counts.limit;
  s["secant_count"] = counts.secant;
  s["saturated_count"] = counts.saturated;
}

std::optional<double> convergenceStation(const std::vector<RunRecord>& records, double threshold) {
  std::optional<double> station;
  for (const auto& rec : records) {
    if (!rec.observerError) {
      continue;
    }
    if (*rec.observerError < threshold) {
      if (!station) {
        station = rec.station;
      }
    } else {
      station.reset();
    }
  }
  return station;
}

}  // namespace

RunResult runSimulate(const ScenarioConfig& c) {
  RunResult result;
  guarded(result, [&] {
    const CarGeometry geom = c.geometry();
    const auto ref = makeReference(c);
    const OpenLoopConfig& o = c.openLoop;
    auto steering = [&](double s) { return o.steering + o.amplitude * std::sin(o.frequency * s); };
    const GroupRateFn<1> f = [&](double s, const GroupState<1>& x) {
      (void)x;
      return GroupRates<1>{sphericalBodyVelocity(o.speed, steering(s), geom)};
    };
    const auto grid = runGrid(c);
    const Rotation3 g0 = initialState(c, ref->at(0.0).frame);
    propagate<1>({g0}, f, grid, c.integrator, [&](std::size_t k, double s, const GroupState<1>& x) {
      if (!recorded(c, k, grid.size() - 1)) {
        return;
      }
      RunRecord rec;
      rec.station = s;
      rec.g = x[0];
      rec.y = rearAxlePosition(x[0], c.rho);
      const ErrorAngles e = anglesOrAntipodal(x[0], ref->at(s).frame);
      rec.sigma = e.sigma;
      rec.delta = e.delta;
      rec.speed = o.speed;
      rec.steering = steering(s);
      rec.curvature = geodesicCurvature(rec.steering, geom);
      result.records.push_back(rec);
    });
  });
  result.summary = baseSummary(c, "simulate", result);
  return result;
}

RunResult runTracking(const ScenarioConfig& c) {
  RunResult result;
  ModeCounts counts;
  guarded(result, [&] {
    c.gains.validate();
    c.policy.validate();
    const CarGeometry geom = c.geometry();
    const auto ref = makeReference(c);
    const GroupRateFn<1> f = [&](double s, const GroupState<1>& x) {
      return GroupRates<1>{closedLoopRate(x[0], ref->at(s), c.gains, c.policy, geom).bodyRate};
    };
    const auto grid = runGrid(c);
    const Rotation3 g0 = initialState(c, ref->at(0.0).frame);
    propagate<1>({g0}, f, grid, c.integrator, [&](std::size_t k, double s, const GroupState<1>& x) {
      const ClosedLoopDiagnostics d =
          closedLoopRate(x[0], ref->at(s), c.gains, c.policy, geom).diagnostics;
      counts.add(d.mode);
      if (!recorded(c, k, grid.size() - 1)) {
        return;
      }
      RunRecord rec;
      rec.station = s;
      rec.g = x[0];
      rec.y = rearAxlePosition(x[0], c.rho);
      rec.sigma = d.sigma;
      rec.delta = d.delta;
      rec.speed = d.speed;
      rec.steering = d.steering;
      rec.curvature = d.curvature;
      rec.mode = d.mode;
      result.records.push_back(rec);
    });
  });
  result.summary = baseSummary(c, "track", result);
  trackingSummary(result.summary, result, c, counts);
  return result;
}

RunResult runObserver(const ScenarioConfig& c) {
  RunResult result;
  result.observing = true;
  ObserverGains gains;
  guarded(result, [&] {
    gains = resolveGains(c);
    const CarGeometry geom = c.geometry();
    const auto ref = makeReference(c);
    const Rotation3 g0 = initialState(c, ref->at(0.0).frame);
    const Rotation3 e0 = initialEstimate(c, g0);
    if (observationError(g0, e0).angle > c.observer->maxInitialError) {
      throw OutOfRegime("initial estimate error exceeds observer.max_initial_error");
    }
    const GroupRateFn<2> f = [&](double s, const GroupState<2>& x) {
      const double k = ref->at(s).curvature;
      return GroupRates<2>{Twist3{0.0, 1.0 / c.rho, k},
                           observerBodyRate(x[1], rearAxlePosition(x[0], c.rho), k, geom, gains)};
    };
    const auto grid = runGrid(c);
    propagate<2>({g0, e0}, f, grid, c.integrator,
                 [&](std::size_t k, double s, const GroupState<2>& x) {
                   const double err = observationError(x[0], x[1]).angle;
                   if (!recorded(c, k, grid.size() - 1)) {
                     return;
                   }
                   const ReferenceSample rs = ref->at(s);
                   RunRecord rec;
                   rec.station = s;
                   rec.g = x[0];
                   rec.estimate = x[1];
                   rec.y = rearAxlePosition(x[0], c.rho);
                   const ErrorAngles e = anglesOrAntipodal(x[0], rs.frame);
                   rec.sigma = e.sigma;
                   rec.delta = e.delta;
                   rec.speed = 1.0;
                   rec.curvature = rs.curvature;
                   rec.steering = steeringFromCurvature(rs.curvature, geom);
                   rec.observerError = err;
                   result.records.push_back(rec);
                 });
  });
  ordered_json& s = result.summary = baseSummary(c, "observe", result);
  s["gains"] = gainsJson(gains);
  s["eigenvalues"] = complexList(eigenvalues(errorLinearization(0.0, c.rho, gains)));
  if (!result.records.empty()) {
    s["observer_error_initial"] = *result.records.front().observerError;
    s["observer_error_final"] = *result.records.back().observerError;
  }
  const auto conv = convergenceStation(result.records, 1e-6);
  s["convergence_station"] = conv ? ordered_json(*conv) : ordered_json(nullptr);
  return result;
}

RunResult runOutputFeedback(const ScenarioConfig& c) {
  RunResult result;
  result.observing = true;
  ModeCounts counts;
  ObserverGains gains;
  guarded(result, [&] {
    c.gains.validate();
    c.policy.validate();
    gains = resolveGains(c);
    const CarGeometry geom = c.geometry();
    const auto ref = makeReference(c);
    const Rotation3 g0 = initialState(c, ref->at(0.0).frame);
    const Rotation3 e0 = initialEstimate(c, g0);
    if (observationError(g0, e0).angle > c.observer->maxInitialError) {
      throw OutOfRegime("initial estimate error exceeds observer.max_initial_error");
    }
    // The controller acts on the estimate; the observer runs in the arc
    // length of the vehicle, hence the factor u.
    const GroupRateFn<2> f = [&](double s, const GroupState<2>& x) {
      const ClosedLoopRate cl = closedLoopRate(x[1], ref->at(s), c.gains, c.policy, geom);
      const double u = cl.diagnostics.speed;
      const double k = cl.diagnostics.curvature;
      return GroupRates<2>{
          Twist3{0.0, u / c.rho, u * k},
          u * observerBodyRate(x[1], rearAxlePosition(x[0], c.rho), k, geom, gains)};
    };
    const auto grid = runGrid(c);
    propagate<2>({g0, e0}, f, grid, c.integrator,
                 [&](std::size_t k, double s, const GroupState<2>& x) {
                   const ReferenceSample rs = ref->at(s);
                   const ClosedLoopDiagnostics d =
                       closedLoopRate(x[1], rs, c.gains, c.policy, geom).diagnostics;
                   counts.add(d.mode);
                   const ErrorAngles e = anglesOrAntipodal(x[0], rs.frame);
                   if (e.sigma > 0.5 * kPi) {
                     throw SingularConfiguration("output feedback diverged: sigma > pi/2");
                   }
                   const double err = observationError(x[0], x[1]).angle;
                   if (!recorded(c, k, grid.size() - 1)) {
                     return;
                   }
                   RunRecord rec;
                   rec.station = s;
                   rec.g = x[0];
                   rec.estimate = x[1];
                   rec.y = rearAxlePosition(x[0], c.rho);
                   rec.sigma = e.sigma;
                   rec.delta = e.delta;
                   rec.speed = d.speed;
                   rec.steering = d.steering;
                   rec.curvature = d.curvature;
                   rec.mode = d.mode;
                   rec.observerError = err;
                   result.records.push_back(rec);
                 });
  });
  ordered_json& s = result.summary = baseSummary(c, "output-feedback", result);
  s["experimental"] = true;
  s["gains"] = gainsJson(gains);
  s["fallback_count"] = counts.fallback;
  s["secant_count"] = counts.secant;
  s["saturated_count"] = counts.saturated;
  if (!result.records.empty()) {
    const RunRecord& first = result.records.front();
    const RunRecord& last = result.records.back();
    s["sigma_initial"] = first.sigma;
    s["sigma_final"] = last.sigma;
    s["observer_error_initial"] = *first.observerError;
    s["observer_error_final"] = *last.observerError;
    s["tracking_converged"] =
        result.status == RunStatus::kCompleted && last.sigma <= 1e-3 * std::max(first.sigma, 1e-6);
  } else {
    s["tracking_converged"] = false;
  }
  return result;
}

ordered_json gainsReport(const ScenarioConfig& c) {
  const ObserverGains gains = resolveGains(c);
  const CubicCoefficients p = characteristicPolynomial(gains, c.rho);
  ordered_json out;
  out["rho"] = c.rho;
  out["gains"] = gainsJson(gains);
  out["characteristic_polynomial"] = {1.0, p.a2, p.a1, p.a0};
  out["eigenvalues"] = complexList(eigenvalues(errorLinearization(0.0, c.rho, gains)));
  return out;
}

std::vector<FlatnessRow> flatnessTable(const ScenarioConfig& c) {
  const CarGeometry geom = c.geometry();
  const CurveFunction curve = curveFor(c);
  const FlatCurveReference ref(curve, 0.0, curveDuration(c), geom);
  const auto grid = runGrid(c);
  std::vector<FlatnessRow> rows;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!recorded(c, k, grid.size() - 1)) {
      continue;
    }
    const double s = grid[k];
    const double t = ref.timeAt(s);
    const CurveJet jet = curve(t);
    const FlatInputs in = flatParametrization(jet, geom);
    rows.push_back({s, t, jet.y, in.speed, in.geodesicCurvature, in.steering,
                    in.curvatureRate ? *in.curvatureRate : ref.at(s).curvatureRate});
  }
  return rows;
}

std::string formatNumber(double value) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

std::vector<std::string> csvHeader(bool observing) {
  std::vector<std::string> h{"s_d"};
  for (int i = 1; i <= 3; ++i) {
    for (int j = 1; j <= 3; ++j) {
      h.push_back("g" + std::to_string(i) + std::to_string(j));
    }
  }
  if (observing) {
    for (int i = 1; i <= 3; ++i) {
      for (int j = 1; j <= 3; ++j) {
        h.push_back("ghat" + std::to_string(i) + std::to_string(j));
      }
    }
  }
  for (const char* name : {"y1", "y2", "y3", "sigma", "delta", "u", "phi", "kappa_g"}) {
    h.emplace_back(name);
  }
  if (observing) {
    h.emplace_back("observer_error");
  }
  return h;
}

namespace {

void writeRow(std::ostream& out, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) {
      out << ',';
    }
    out << formatNumber(values[i]);
  }
  out << '\n';
}

void appendMatrix(std::vector<double>& row, const Mat3& m) {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      row.push_back(m(i, j));
    }
  }
}

}  // namespace

void writeCsv(std::ostream& out, const std::vector<RunRecord>& records, bool observing) {
  const auto header = csvHeader(observing);
  for (std::size_t i = 0; i < header.size(); ++i) {
    out << (i > 0 ? "," : "") << header[i];
  }
  out << '\n';
  std::vector<double> row;
  for (const auto& r : records) {
    row.clear();
    row.push_back(r.station);
    appendMatrix(row, r.g.matrix());
    if (observing) {
      appendMatrix(row, r.estimate ? r.estimate->matrix() : Mat3::Constant(std::nan("")));
    }
    row.insert(row.end(),
               {r.y.x(), r.y.y(), r.y.z(), r.sigma, r.delta, r.speed, r.steering, r.curvature});
    if (observing) {
      row.push_back(r.observerError.value_or(std::nan("")));
    }
    writeRow(out, row);
  }
}

void writeFlatnessCsv(std::ostream& out, const std::vector<FlatnessRow>& rows) {
  out << "s_d,t,y1,y2,y3,v,kappa_g,phi,kappa_g_rate\n";
  for (const auto& r : rows) {
    writeRow(out, {r.station, r.time, r.y.x(), r.y.y(), r.y.z(), r.speed, r.curvature, r.steering,
                   r.curvatureRate});
  }
}

void emitOutputs(const RunResult& result, const ScenarioConfig& config,
                 const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) {
    throw ConfigError("cannot create output directory " + directory.string() + ": " + ec.message());
  }
  const auto csvPath = directory / config.csvName;
  std::ofstream csv(csvPath, std::ios::binary);
  if (!csv) {
    throw ConfigError("cannot write " + csvPath.string());
  }
  writeCsv(csv, result.records, result.observing);
  if (!csv.flush()) {
    throw ConfigError("write failed for " + csvPath.string());
  }
  const auto summaryPath = directory / config.summaryName;
  std::ofstream summary(summaryPath, std::ios::binary);
  if (!summary) {
    throw ConfigError("cannot write " + summaryPath.string());
  }
  summary << result.summary.dump(2) << '\n';
  if (!summary.flush()) {
    throw ConfigError("write failed for " + summaryPath.string());
  }
}

double fitDecayRate(const std::vector<RunRecord>& records, double floor) {
  double n = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& r : records) {
    if (!(r.sigma > floor)) {
      continue;
    }
    const double y = std::log(r.sigma);
    n += 1.0;
    sx += r.station;
    sy += y;
    sxx += r.station * r.station;
    sxy += r.station * y;
  }
  const double den = n * sxx - sx * sx;
  if (n < 2.0 || !(std::abs(den) > 0.0)) {
    return std::nan("");
  }
  return -(n * sxy - sx * sy) / den;
}

double deltaOdeResidual(const std::vector<RunRecord>& records, const ControllerGains& gains) {
  double worst = 0.0;
  for (std::size_t i = 1; i + 1 < records.size(); ++i) {
    const RunRecord& a = records[i - 1];
    const RunRecord& b = records[i];
    const RunRecord& c = records[i + 1];
    if (a.mode != SteeringMode::kAffine || b.mode != SteeringMode::kAffine ||
        c.mode != SteeringMode::kAffine) {
      continue;
    }
    const double h = b.station - a.station;
    if (!(h > 0.0) || std::abs((c.station - b.station) - h) > 1e-9 * h) {
      continue;
    }
    const double up = wrapAngle(c.delta - b.delta);
    const double down = wrapAngle(b.delta - a.delta);
    const double d1 = (up + down) / (2.0 * h);
    const double d2 = (up - down) / (h * h);
    worst = std::max(worst, std::abs(d2 + gains.cDelta1 * d1 + gains.cDelta0 * b.delta));
  }
  return worst;
}

}  // namespace spherecar
