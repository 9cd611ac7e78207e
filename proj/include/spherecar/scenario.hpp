#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "spherecar/car_models.hpp"
#include "spherecar/controller.hpp"
#include "spherecar/integrators.hpp"
#include "spherecar/observer.hpp"
#include "spherecar/reference.hpp"

namespace spherecar {

enum class ReferenceKind { kGreatCircle, kLatitudeCircle, kFlatCurve };

struct ReferenceConfig {
  ReferenceKind kind = ReferenceKind::kGreatCircle;
  Vec3 axis = Vec3::UnitZ();      // great circle normal
  std::optional<Vec3> start;      // great circle start direction
  double colatitude = 0.5 * kPi;  // latitude circle and flat curve
  Vec3 pole = Vec3::UnitZ();      // latitude circle
  // flat curve: psi(t) = colatitude + amplitude sin(frequency t), azimuth = azimuthRate t
  double amplitude = 0.0;
  double frequency = 1.0;
  double azimuthRate = 1.0;
  double duration = 2.0 * kPi;  // t in [0, duration]
};

struct ObserverConfig {
  std::optional<std::array<std::complex<double>, 3>> poles;
  std::optional<ObserverGains> gains;
  double l32 = 0.0;
  /// Initial estimate errors above this angle are rejected as out of regime.
  double maxInitialError = 0.5;
};

/// Initial vehicle state. Relative mode offsets the vehicle from g_d(0) by
/// the error angles; absolute mode places the rear axle at `position` with
/// `heading` from the meridian frame.
struct InitialConfig {
  bool absolute = false;
  double sigma = 0.0;
  double delta = 0.0;
  double headingOffset = 0.0;
  Vec3 position = Vec3::UnitZ();
  double heading = 0.0;
};

/// Initial estimate g_hat(0) = g(0) exp(angle * axis); axis drawn from the
/// seeded generator when absent.
struct EstimateConfig {
  double angle = 0.0;
  std::optional<Vec3> axis;
};

/// Open-loop inputs: u constant, phi(s) = steering + amplitude sin(frequency s).
struct OpenLoopConfig {
  double speed = 1.0;
  double steering = 0.0;
  double amplitude = 0.0;
  double frequency = 1.0;
};

struct ScenarioConfig {
  double rho = 1.0;
  double wheelbase = 0.1;
  double wheelRadius = 0.0;
  ReferenceConfig reference;
  ControllerGains gains;
  SingularityPolicy policy;
  std::optional<ObserverConfig> observer;
  InitialConfig initial;
  EstimateConfig estimate;
  OpenLoopConfig openLoop;
  IntegratorConfig integrator;
  double sEnd = 10.0;
  int recordEvery = 1;
  std::string csvName = "run.csv";
  std::string summaryName = "summary.json";
  std::uint64_t seed = 0;

  CarGeometry geometry() const { return {wheelbase, wheelRadius, rho}; }
};

/// Parses and validates a configuration document. Unknown keys are rejected;
/// errors name the offending field or the line of a syntax error. Warnings
/// (such as a normalised initial position) are appended to `warnings`.
ScenarioConfig parseConfig(const std::string& text, std::vector<std::string>* warnings = nullptr);

/// Reads `path` and parses it. Throws ConfigError on I/O or validation failure.
ScenarioConfig loadConfig(const std::filesystem::path& path,
                          std::vector<std::string>* warnings = nullptr);

std::unique_ptr<Reference> makeReference(const ScenarioConfig& config);

/// Initial vehicle configuration for the reference start frame g_d(0).
Rotation3 initialState(const ScenarioConfig& config, const Rotation3& referenceStart);

/// Initial estimate for a true initial configuration.
Rotation3 initialEstimate(const ScenarioConfig& config, const Rotation3& truth);

/// Name of the generator used for sampled initial perturbations.
inline constexpr const char* kGeneratorName = "mt19937_64";

struct RunRecord {
  double station = 0.0;
  Rotation3 g;
  std::optional<Rotation3> estimate;
  Vec3 y = Vec3::Zero();
  double sigma = 0.0;
  double delta = 0.0;
  double speed = 1.0;
  double steering = 0.0;
  double curvature = 0.0;
  std::optional<double> observerError;
  SteeringMode mode = SteeringMode::kLimit;
};

enum class RunStatus { kCompleted, kControllerFailure, kOutOfRegime, kConfigError };

/// Process exit code for a status: 0, 2, 3, 1.
int exitCode(RunStatus status);

struct RunResult {
  std::vector<RunRecord> records;
  bool observing = false;
  RunStatus status = RunStatus::kCompleted;
  std::string message;
  nlohmann::ordered_json summary;
};

/// Open-loop spherical model driven by the open_loop inputs.
RunResult runSimulate(const ScenarioConfig& config);
/// Closed loop with speed and steering feedback on the true state.
RunResult runTracking(const ScenarioConfig& config);
/// Observer on an open-loop truth driven by the reference inputs.
RunResult runObserver(const ScenarioConfig& config);
/// Experimental: controller fed by the observer estimate.
RunResult runOutputFeedback(const ScenarioConfig& config);

/// Gains for the configured poles or explicit gains, with the resulting
/// linearisation eigenvalues.
nlohmann::ordered_json gainsReport(const ScenarioConfig& config);

struct FlatnessRow {
  double station;
  double time;
  Vec3 y;
  double speed;
  double curvature;
  double steering;
  double curvatureRate;
};

/// Inputs recovered from the reference curve at stations 0, h, ..., s_end.
std::vector<FlatnessRow> flatnessTable(const ScenarioConfig& config);

/// Decimal text with 17 significant digits (exact round trip).
std::string formatNumber(double value);

std::vector<std::string> csvHeader(bool observing);
void writeCsv(std::ostream& out, const std::vector<RunRecord>& records, bool observing);
void writeFlatnessCsv(std::ostream& out, const std::vector<FlatnessRow>& rows);

/// Writes the CSV and summary of `result` into `directory` (created if
/// missing). Throws ConfigError with the path on I/O failure.
void emitOutputs(const RunResult& result, const ScenarioConfig& config,
                 const std::filesystem::path& directory);

/// Decay rate c of sigma ~ exp(-c s) by least squares on log sigma over the
/// records with sigma above `floor`.
double fitDecayRate(const std::vector<RunRecord>& records, double floor = 1e-12);

/// Max |delta'' + c1 delta' + c0 delta| by central differences over
/// consecutive uniformly spaced records that are all in affine mode.
double deltaOdeResidual(const std::vector<RunRecord>& records, const ControllerGains& gains);

}  // namespace spherecar
