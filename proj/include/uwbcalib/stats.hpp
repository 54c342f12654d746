#pragma once

namespace uwbcalib {

// Chi-square quantiles used for gating and consistency bands. Values are
// hardcoded to 17 significant digits so no runtime special-function library
// is needed; dimensions beyond 3 never occur in a gate here.

// 0.999 quantiles, used as Mahalanobis gates.
inline constexpr double kChi2Gate999Dim1 = 10.827566170662733;
inline constexpr double kChi2Gate999Dim2 = 13.815510557964274;
inline constexpr double kChi2Gate999Dim3 = 16.266236196238129;

// Central 95% bands (0.025 and 0.975 quantiles) for NEES checks.
inline constexpr double kChi2Band95LoDim2 = 0.050635615968579795;
inline constexpr double kChi2Band95HiDim2 = 7.3777589082278725;
inline constexpr double kChi2Band95LoDim3 = 0.21579528262389785;
inline constexpr double kChi2Band95HiDim3 = 9.3484036044961485;

}  // namespace uwbcalib
