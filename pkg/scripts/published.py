"""Published MUTAG accuracies (mean±std, %) used as reference columns."""

MUTAG = {
    0.3: {"GCN": "81.52±11.12", "GraphCL": "84.65±8.32", "SSCDL": "89.36±6.14", "SSCDL_cl": "87.22±8.21", "SSCDL_ft": "87.81±8.66"},
    0.5: {"GCN": "83.1±8.83", "GraphCL": "85.09±8.19", "SSCDL": "89.94±8.76", "SSCDL_cl": "89.36±7.89", "SSCDL_ft": "88.8±9.48"},
    0.7: {"GCN": "84.21±11.37", "GraphCL": "88.8±5.87", "SSCDL": "89.91±7.3", "SSCDL_cl": "89.39±7.83", "SSCDL_ft": "89.3±71.7"},
}

# our variant name -> row label in the published tables
ROW = {"SSCDL": "SSCDL", "SSCDL_cl": "SSCDL_cl", "SSCDL_ft": "SSCDL_ft", "GCN_supervised": "GCN", "GraphCL_ntxent": "GraphCL"}
