#pragma once

#include "loadtl/numcore.hpp"
#include "loadtl/kernels.hpp"
#include "loadtl/autodiff.hpp"
#include "loadtl/dataio.hpp"
#include "loadtl/models.hpp"
#include "loadtl/training.hpp"
#include "loadtl/metrics.hpp"
#include "loadtl/transfer.hpp"
#include "loadtl/report.hpp"
