#pragma once

namespace arcnet {

// Geometry of one IMU window: six sensor rows (accel x/y/z then gyro x/y/z)
// of 128 time steps at 50 Hz. Consecutive windows overlap by 60%, which
// rounds to an integer stride of 51 samples.
inline constexpr int kImuRows = 6;
inline constexpr int kWindowLen = 128;
inline constexpr int kWindowStride = 51;  // round(128 * 0.4)

}  // namespace arcnet
