#pragma once

#include "ibm/tensor.hpp"
#include "ibm/rng.hpp"
#include "ibm/linalg.hpp"
#include "ibm/vib_layer.hpp"
#include "ibm/network.hpp"
#include "ibm/mask_manager.hpp"
#include "ibm/feature_decomposer.hpp"
#include "ibm/metrics.hpp"
#include "ibm/data.hpp"
#include "ibm/idx.hpp"
#include "ibm/config.hpp"
#include "ibm/pool_io.hpp"
#include "ibm/report.hpp"
#include "ibm/harness.hpp"
