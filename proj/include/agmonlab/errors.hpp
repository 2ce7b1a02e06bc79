#pragma once

#include <stdexcept>
#include <string>

namespace agmonlab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define AGMONLAB_DEFINE_ERROR(Name)        \
  struct Name : Error {                    \
    using Error::Error;                    \
  }

AGMONLAB_DEFINE_ERROR(GridMismatch);
AGMONLAB_DEFINE_ERROR(NonIntegrableSingularity);
AGMONLAB_DEFINE_ERROR(NonpositiveRadius);
AGMONLAB_DEFINE_ERROR(EmptyIntersection);
AGMONLAB_DEFINE_ERROR(OutOfDomain);
AGMONLAB_DEFINE_ERROR(NoMagneticComponent);
AGMONLAB_DEFINE_ERROR(NegativeWeight);
AGMONLAB_DEFINE_ERROR(NegativePotential);
AGMONLAB_DEFINE_ERROR(DegenerateWeight);
AGMONLAB_DEFINE_ERROR(InsufficientResolution);
AGMONLAB_DEFINE_ERROR(UnconvergedMetric);
AGMONLAB_DEFINE_ERROR(EmptySource);
AGMONLAB_DEFINE_ERROR(NotPositiveDefinite);
AGMONLAB_DEFINE_ERROR(MaxIterations);
AGMONLAB_DEFINE_ERROR(BoundarySource);
AGMONLAB_DEFINE_ERROR(EllipticityViolation);
AGMONLAB_DEFINE_ERROR(BallOutOfBox);
AGMONLAB_DEFINE_ERROR(UnsupportedMatrixA);
AGMONLAB_DEFINE_ERROR(SetsOverlap);
AGMONLAB_DEFINE_ERROR(InsufficientPairs);
AGMONLAB_DEFINE_ERROR(NondecayingData);
AGMONLAB_DEFINE_ERROR(DegenerateTest);
AGMONLAB_DEFINE_ERROR(SupportTooLarge);
AGMONLAB_DEFINE_ERROR(NoSmallBallPairs);
AGMONLAB_DEFINE_ERROR(NonpositiveSolution);
AGMONLAB_DEFINE_ERROR(UnsupportedSetting);
AGMONLAB_DEFINE_ERROR(ConfigError);
AGMONLAB_DEFINE_ERROR(IoError);

#undef AGMONLAB_DEFINE_ERROR

}  // namespace agmonlab
