#pragma once

// Resilient distributed model-predictive energy management for interconnected
// microgrids: negotiation by multiplier exchange, robustified dispatch,
// Bayesian identification of non-compliant neighbors, connection blocking,
// and sub-optimality certification.

#include "mgrid/adversary.hpp"
#include "mgrid/common.hpp"
#include "mgrid/config.hpp"
#include "mgrid/connection.hpp"
#include "mgrid/dual_decomp.hpp"
#include "mgrid/horizon.hpp"
#include "mgrid/loads.hpp"
#include "mgrid/orchestrator.hpp"
#include "mgrid/params.hpp"
#include "mgrid/qp.hpp"
#include "mgrid/report.hpp"
#include "mgrid/rng.hpp"
#include "mgrid/robustify.hpp"
