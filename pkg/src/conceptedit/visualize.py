"""Plots of ambiguity trajectories and importance tables"""
import numpy as np

from .metrics import ambiguity_trajectory

__all__ = ['AmbiguityPlot', 'plot_ambiguity', 'plot_importance']


class AmbiguityPlot():
    """Mean majority fraction of the classifier votes per edit step

    One line is drawn per strategy (or any other grouping of traces).

    Attributes
    ----------
    fig_width : float {12.0}
        Figure width, in cm
    fig_height: float {8.0}
        Figure height, in cm
    dpi: int {300}
        Resolution to use when saving, or showing interactively
    line_properties: dict
        Keyword arguments for every trajectory line
    legend: bool
        Whether or not to show the legend
    """

    def __init__(self):
        self._fig = None
        self._ax = None
        self._artists = None
        self.fig_width = 12.0
        self.fig_height = 8.0
        self.dpi = 300
        self.line_properties = {'marker': 'o', 'lw': 1.0, 'markersize': 3}
        self.legend = True
        self.xlabel = 'edit step'
        self.ylabel = 'majority fraction'
        self._trajectories = {}

    @property
    def figsize(self):
        """Tuple (width, height) of figure size in inches"""
        cm2inch = 0.39370079
        return (self.fig_width * cm2inch, self.fig_height * cm2inch)

    @property
    def fig(self):
        """Figure on which the plot has been rendered (after `render`)"""
        return self._fig

    @property
    def ax(self):
        return self._ax

    @property
    def artists(self):
        """List of rendered trajectory lines"""
        return self._artists

    @property
    def trajectories(self):
        return dict(self._trajectories)

    def add_traces(self, traces, label=None):
        """Add the ambiguity trajectory of `traces`

        Without a `label`, traces are grouped by their strategy.
        """
        traces = list(traces)
        if label is not None:
            self._trajectories[label] = ambiguity_trajectory(traces)
            return
        for strategy in sorted({t.strategy.value for t in traces}):
            group = [t for t in traces if t.strategy.value == strategy]
            self._trajectories[strategy] = ambiguity_trajectory(group)

    def render(self, ax):
        """Render the trajectories on the given Axes object"""
        self._ax = ax
        self._fig = ax.figure
        self._artists = []
        for (label, values) in self._trajectories.items():
            line, = ax.plot(
                np.arange(len(values)), values, label=label,
                **self.line_properties)
            self._artists.append(line)
        ax.set_xlabel(self.xlabel)
        ax.set_ylabel(self.ylabel)
        ax.set_ylim(0.45, 1.05)
        if self.legend and self._trajectories:
            ax.legend(fontsize='small')

    def plot(self, fig=None):
        """Render on the given figure, or on a new figure"""
        if fig is None:
            from matplotlib.figure import Figure
            fig = Figure(figsize=self.figsize, dpi=self.dpi)
        ax = fig.add_subplot(111)
        self.render(ax)
        return fig

    def savefig(self, filename):
        fig = self.plot()
        fig.savefig(filename, bbox_inches='tight')


def plot_ambiguity(traces, filename=None, fig=None):
    """Plot the ambiguity trajectories of `traces`, one line per strategy

    Returns the :class:`AmbiguityPlot`; if `filename` is given, the plot is
    also written to that file.
    """
    plot = AmbiguityPlot()
    plot.add_traces(traces)
    if filename is not None:
        plot.savefig(filename)
    else:
        plot.plot(fig)
    return plot


def plot_importance(table, top=10, ax=None):
    """Horizontal bar chart of the `top` pairs of an importance table

    Bars carry standard-deviation error bars where the table has them.
    """
    entries = table.top(top)
    if ax is None:
        from matplotlib.figure import Figure
        fig = Figure(figsize=(4.7, 0.25 * max(len(entries), 4) + 1))
        ax = fig.add_subplot(111)
    names = []
    for entry in entries:
        edit = entry.endorsed_edit()
        names.append(
            edit.describe() if edit is not None else " / ".join(entry.pair))
    scores = [abs(float(entry.score)) for entry in entries]
    errors = [entry.std or 0.0 for entry in entries]
    positions = np.arange(len(entries))
    ax.barh(positions, scores, xerr=errors, color='gray', ecolor='black')
    ax.set_yticks(positions)
    ax.set_yticklabels(names, fontsize='small')
    ax.invert_yaxis()
    ax.set_xlabel('importance')
    ax.set_xlim(0, 1.1)
    return ax
