#pragma once

#include <stdexcept>
#include <string>

namespace evpanel {

// Every recoverable failure derives from Error. name() is a stable
// machine-readable tag; the CLI surfaces it in its error record, tests
// match on it, and messages stay free-form.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& what)
      : std::runtime_error(what), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

#define EVPANEL_ERROR(Name)                               \
  class Name : public Error {                             \
   public:                                                \
    explicit Name(const std::string& what)                \
        : Error(#Name, what) {}                           \
  }

// panel loading / validation
EVPANEL_ERROR(MissingColumn);
EVPANEL_ERROR(DuplicateCell);
EVPANEL_ERROR(MalformedRow);
EVPANEL_ERROR(NoAnchor);

// simulator
EVPANEL_ERROR(UnstablePersistence);
EVPANEL_ERROR(InvalidAdoptionProcess);

// regression engine
EVPANEL_ERROR(EmptySample);
EVPANEL_ERROR(SingleCluster);
EVPANEL_ERROR(DegenerateRestriction);

class NoConvergence : public Error {
 public:
  NoConvergence(int max_iter, double last_update, const std::string& what)
      : Error("NoConvergence", what),
        max_iter(max_iter),
        last_update(last_update) {}
  int max_iter;
  double last_update;
};

// estimators
EVPANEL_ERROR(CollinearDesign);
EVPANEL_ERROR(EmptyEventTime);
EVPANEL_ERROR(NoControlCohort);
EVPANEL_ERROR(NoControlObservations);
EVPANEL_ERROR(PropensityOverlap);
EVPANEL_ERROR(InvalidSpec);

// inference
EVPANEL_ERROR(MissingCoefficient);
EVPANEL_ERROR(InfeasibleLP);

// descriptives
EVPANEL_ERROR(EmptyGroup);

// CLI / config
EVPANEL_ERROR(ConfigError);

#undef EVPANEL_ERROR

}  // namespace evpanel
