"""
Figures
Plotly summary figure of a run for the optional html export
"""
from typing import List, Optional

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

SWEEP_COLUMNS = {
    'z_over_z0': 'z_over_z0',
    'power': 'power_W',
    'tau_ill': 'tau_ill_s',
    'tau_2': 'tau_2_s',
    'energy': 'energy_J',
    'detuning': 'detuning_rad_s',
}


def build_figure(config, summary: pd.DataFrame, images: List[np.ndarray],
                 linescans: List[pd.DataFrame], curve: Optional[pd.DataFrame] = None) -> go.Figure:
    """
    Two-panel figure: the last image of the sweep, and either the beam line scans
    or the measured widths against the swept parameter
    """
    scheme = config.sequence.scheme
    fig = make_subplots(rows=1, cols=2, subplot_titles=("Image", "Line scans" if scheme == "beam" else "Widths"))
    if images:
        fig.add_trace(go.Heatmap(z=images[-1], colorscale='Viridis', showscale=False), row=1, col=1)

    if scheme == "beam":
        for i, scan in enumerate(linescans):
            fig.add_trace(go.Scatter(x=scan['u_m'], y=scan['intensity_W_m2'], mode='lines',
                                     name=f"point {i}"), row=1, col=2)
            if scan['parabola_W_m2'].notna().any():
                fig.add_trace(go.Scatter(x=scan['u_m'], y=scan['parabola_W_m2'], mode='lines',
                                         line=dict(dash='dash'), name=f"parabola {i}"), row=1, col=2)
    else:
        x_col = SWEEP_COLUMNS[config.sweep.parameter]
        for col in ('sigma_x_m', 'sigma_y_m', 'sigma_y_model_m'):
            if col in summary:
                fig.add_trace(go.Scatter(x=summary[x_col], y=summary[col], mode='markers', name=col),
                              row=1, col=2)
        if curve is not None:
            fig.add_trace(go.Scatter(x=curve.iloc[:, 0], y=curve['sigma_y_m'], mode='lines', name='fit'),
                          row=1, col=2)
        if config.sweep.parameter == "energy":
            fig.update_xaxes(type='log', row=1, col=2)
            fig.update_yaxes(type='log', row=1, col=2)

    fig.update_layout(title=config.name, template='plotly_white')
    return fig
