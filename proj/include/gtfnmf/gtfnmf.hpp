// Umbrella header.
#pragma once

#include "gtfnmf/audio.hpp"
#include "gtfnmf/common.hpp"
#include "gtfnmf/cubature.hpp"
#include "gtfnmf/ekf.hpp"
#include "gtfnmf/ep.hpp"
#include "gtfnmf/ihgp.hpp"
#include "gtfnmf/kalman.hpp"
#include "gtfnmf/kernels.hpp"
#include "gtfnmf/learning.hpp"
#include "gtfnmf/linalg.hpp"
#include "gtfnmf/model.hpp"
#include "gtfnmf/tasks.hpp"
